#include <doctest.h>

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "dtpn/io_formats.hpp"
#include "dtpn/model.hpp"
#include "dtpn/run_config.hpp"
#include "test_util.hpp"

using namespace dtpn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small enough that the whole pipeline runs in a couple of seconds.
constexpr const char* kSmallConfig =
    "sampling.scales = 3\n"
    "sampling.base_scale = 8\n"
    "model.input_dim = 8\n"
    "model.branch_filters = 4\n"
    "train.lr_hi = 0.001\n";

struct Workspace {
  testing::TempDir dir;
  std::string cfg, corpus, frames, features;

  Workspace() {
    cfg = (dir / "small.cfg").string();
    io::write_file(cfg, kSmallConfig);
    corpus = (dir / "synth" / "corpus.json").string();
    frames = (dir / "synth" / "frames").string();
    features = (dir / "features").string();
  }

  Result synth(int videos = 3) {
    return run({"synth", "--config", cfg, "--out-dir", (dir / "synth").string(), "--seed", "11", "--videos",
                std::to_string(videos), "--classes", "2", "--max-instances", "2"});
  }
  Result extract(const std::string& out_dir) {
    return run({"extract", "--config", cfg, "--corpus", corpus, "--frames-dir", frames, "--out-dir", out_dir});
  }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth, extract, train, detect, eval") {
    Workspace ws;
    REQUIRE(ws.synth().code == 0);
    const Corpus corpus = io::load_corpus(ws.corpus);
    CHECK(corpus.videos.size() == 3);

    REQUIRE(ws.extract(ws.features).code == 0);
    for (const auto& v : corpus.videos) {
      const auto h = io::read_feature_header(fs::path(ws.features) / (v.meta.id + ".dtpf"));
      CHECK(h.dim == 8);
      CHECK(h.scales == 3);
      CHECK(h.base_scale == 8);
    }
    const std::string again = (ws.dir / "features2").string();
    REQUIRE(ws.extract(again).code == 0);
    for (const auto& v : corpus.videos) {
      CHECK(io::read_file(fs::path(ws.features) / (v.meta.id + ".dtpf")) ==
            io::read_file(fs::path(again) / (v.meta.id + ".dtpf")));
    }

    const std::string ckpt = (ws.dir / "model.dtpm").string(), log = (ws.dir / "loss.csv").string();
    auto train = [&](const std::string& out) {
      return run({"train", "--config", ws.cfg, "--corpus", ws.corpus, "--features-dir", ws.features, "--out", out,
                  "--loss-log", log, "--seed", "7", "--epochs-hi", "2", "--epochs-lo", "1"});
    };
    const auto tr = train(ckpt);
    REQUIRE_MESSAGE(tr.code == 0, tr.err);
    CHECK(tr.out.find("epoch 3") != std::string::npos);
    const std::string log_text = io::read_file(log);
    CHECK(log_text.rfind("epoch,learning_rate,loss\n1,", 0) == 0);
    CHECK(std::count(log_text.begin(), log_text.end(), '\n') == 4);
    REQUIRE(train((ws.dir / "model2.dtpm").string()).code == 0);
    CHECK(io::read_file(ckpt) == io::read_file(ws.dir / "model2.dtpm"));

    const std::string dets = (ws.dir / "dets.json").string();
    const auto dr = run({"detect", "--config", ws.cfg, "--checkpoint", ckpt, "--corpus", ws.corpus, "--features-dir",
                         ws.features, "--out", dets, "--top-k", "5", "--jobs", "2"});
    REQUIRE_MESSAGE(dr.code == 0, dr.err);
    const auto results = io::read_detections(dets, corpus);
    CHECK(results.size() == 3);
    for (const auto& [id, list] : results) {
      CHECK(list.size() <= 5);
      for (std::size_t i = 1; i < list.size(); ++i) CHECK(list[i - 1].score >= list[i].score);
    }

    const std::string report = (ws.dir / "report.json").string(), curves = (ws.dir / "pr.csv").string();
    const auto er = run({"eval", "--detections", dets, "--corpus", ws.corpus, "--out-json", report, "--out-csv", curves});
    REQUIRE_MESSAGE(er.code == 0, er.err);
    CHECK(er.out.find("mAP") != std::string::npos);
    CHECK(fs::exists(report));
    CHECK(fs::exists(curves));
    const auto er2 = run({"eval", "--detections", dets, "--corpus", ws.corpus, "--out-json", report + ".2"});
    CHECK(io::read_file(report) == io::read_file(report + ".2"));
  }

  TEST_CASE("validation failures exit with 1 and name the video") {
    Workspace ws;
    REQUIRE(ws.synth(2).code == 0);
    const Corpus corpus = io::load_corpus(ws.corpus);
    const std::string victim = corpus.videos[1].meta.id;
    fs::remove(fs::path(ws.frames) / (victim + ".frames"));
    auto r = ws.extract(ws.features);
    CHECK(r.code == 1);
    CHECK(r.err.find(victim) != std::string::npos);
    CHECK_FALSE(fs::exists(ws.features));

    fs::create_directories(ws.features);
    r = run({"train", "--config", ws.cfg, "--corpus", ws.corpus, "--features-dir", ws.features, "--out",
             (ws.dir / "m.dtpm").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("missing feature file") != std::string::npos);
    CHECK_FALSE(fs::exists(ws.dir / "m.dtpm"));

    CHECK(run({"eval", "--detections", (ws.dir / "none.json").string(), "--corpus", ws.corpus}).code == 1);
    io::write_file(ws.dir / "bad.json", R"({"results":{"ghost":[]}})");
    CHECK(run({"eval", "--detections", (ws.dir / "bad.json").string(), "--corpus", ws.corpus}).code == 1);
    CHECK(run({"frobnicate"}).code != 0);
  }

  TEST_CASE("feature header mismatch is reported with both headers") {
    Workspace ws;
    REQUIRE(ws.synth(1).code == 0);
    REQUIRE(ws.extract(ws.features).code == 0);
    const Corpus corpus = io::load_corpus(ws.corpus);
    ModelConfig mc = parse_run_config(kSmallConfig).model_for(2);
    mc.input_dim = 9;
    Model m(mc);
    save_checkpoint(ws.dir / "wide.dtpm", m);
    const auto r = run({"detect", "--checkpoint", (ws.dir / "wide.dtpm").string(), "--corpus", ws.corpus,
                        "--features-dir", ws.features, "--out", (ws.dir / "d.json").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("d=8") != std::string::npos);
    CHECK(r.err.find("d=9") != std::string::npos);
  }

  TEST_CASE("zero checkpoint, replayed ground truth and empty detections") {
    Workspace ws;
    REQUIRE(ws.synth(2).code == 0);
    REQUIRE(ws.extract(ws.features).code == 0);
    const Corpus corpus = io::load_corpus(ws.corpus);
    Model zero(parse_run_config(kSmallConfig).model_for(2));
    save_checkpoint(ws.dir / "zero.dtpm", zero);
    const std::string dets = (ws.dir / "zero.json").string();
    REQUIRE(run({"detect", "--checkpoint", (ws.dir / "zero.dtpm").string(), "--corpus", ws.corpus, "--features-dir",
                 ws.features, "--out", dets, "--score-floor", "0.3"})
                .code == 0);
    for (const auto& [id, list] : io::read_detections(dets, corpus)) CHECK(list.empty());

    REQUIRE(run({"detect", "--checkpoint", (ws.dir / "zero.dtpm").string(), "--corpus", ws.corpus, "--features-dir",
                 ws.features, "--out", dets, "--score-floor", "0", "--top-k", "1"})
                .code == 0);
    for (const auto& [id, list] : io::read_detections(dets, corpus)) CHECK(list.size() == 1);

    io::DetectionResults gt;
    for (const auto& v : corpus.videos) {
      for (const auto& g : v.segments) gt[v.meta.id].push_back({g.start, g.end, g.label_index, 1.0});
    }
    io::write_detections(ws.dir / "gt.json", gt, corpus);
    const std::string rep = (ws.dir / "r.json").string();
    REQUIRE(run({"eval", "--detections", (ws.dir / "gt.json").string(), "--corpus", ws.corpus, "--out-json", rep}).code == 0);
    CHECK(nlohmann::json::parse(io::read_file(rep))["average_map"].get<double>() == 1.0);

    io::write_file(ws.dir / "empty.json", R"({"results":{}})");
    REQUIRE(run({"eval", "--detections", (ws.dir / "empty.json").string(), "--corpus", ws.corpus, "--out-json", rep}).code == 0);
    CHECK(nlohmann::json::parse(io::read_file(rep))["average_map"].get<double>() == 0.0);
  }

  TEST_CASE("gradcheck exit codes") {
    auto ok = run({"gradcheck", "--size", "tiny"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("FAIL") == std::string::npos);
    auto bad = run({"gradcheck", "--inject-fault", "conv-sign"});
    CHECK(bad.code == 2);
    CHECK(bad.out.find("FAIL conv1d") != std::string::npos);
  }
}
