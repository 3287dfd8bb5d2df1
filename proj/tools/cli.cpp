#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "dtpn/error.hpp"
#include "dtpn/eval.hpp"
#include "dtpn/gradcheck_suite.hpp"
#include "dtpn/io_formats.hpp"
#include "dtpn/model.hpp"
#include "dtpn/parallel.hpp"
#include "dtpn/postprocess.hpp"
#include "dtpn/run_config.hpp"
#include "dtpn/sampling.hpp"
#include "dtpn/synthetic.hpp"
#include "dtpn/train.hpp"

namespace dtpn::cli {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  int jobs = 1;
};

RunConfig load_config(const Common& c) {
  return c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
}

fs::path feature_path(const fs::path& dir, const std::string& id) { return dir / (id + ".dtpf"); }
fs::path frame_path(const fs::path& dir, const std::string& id) { return dir / (id + ".frames"); }

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string out_dir;
  std::uint64_t seed = 0;
  int videos = 32;
  int classes = 3;
  int max_instances = 3;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(a.common);
  SyntheticOptions opts;
  opts.frame_dim = cfg.frame_dim;
  opts.feature_dim = cfg.model.input_dim;
  opts.backbone_seed = cfg.backbone_seed;
  opts.sampling = cfg.sampling;
  const auto data = make_synthetic_corpus(a.seed, a.videos, a.classes, a.max_instances, opts, a.common.jobs);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir / "frames");
  io::save_corpus(dir / "corpus.json", data.corpus);
  for (std::size_t v = 0; v < data.frames.size(); ++v) {
    save_frames(frame_path(dir / "frames", data.corpus.videos[v].meta.id), data.frames[v]);
  }
  out << "wrote " << data.corpus.videos.size() << " videos to " << dir.string() << '\n';
  return kOk;
}

// ---- extract --------------------------------------------------------------

struct ExtractArgs {
  Common common;
  std::string corpus;
  std::string frames_dir;
  std::string features_in;  // pass-through source
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.common);
  if (a.seed) cfg.backbone_seed = *a.seed;
  const Corpus corpus = io::load_corpus(a.corpus);
  const bool passthrough = !a.features_in.empty();
  if (!passthrough && a.frames_dir.empty()) {
    throw ValidationError("extract: one of --frames-dir or --features-in is required");
  }

  // Validate every source before computing anything.
  std::vector<fs::path> sources;
  for (const auto& v : corpus.videos) {
    const fs::path src = passthrough ? feature_path(a.features_in, v.meta.id)
                                     : (fs::is_directory(fs::path(a.frames_dir) / v.meta.id)
                                            ? fs::path(a.frames_dir) / v.meta.id
                                            : frame_path(a.frames_dir, v.meta.id));
    if (!fs::exists(src)) {
      throw ValidationError("video '" + v.meta.id + "': missing source " + src.string());
    }
    sources.push_back(src);
  }

  fs::create_directories(a.out_dir);
  const SyntheticBackbone backbone(cfg.backbone_seed, cfg.frame_dim, cfg.model.input_dim);
  parallel_for(corpus.videos.size(), a.common.jobs, [&](std::size_t i) {
    const auto& meta = corpus.videos[i].meta;
    try {
      PyramidFeature p;
      if (passthrough) {
        p = extract_pyramid(sources[i], cfg.sampling);
      } else {
        const FrameSequence frames = load_frames(sources[i], cfg.frame_dim);
        if (frames.num_frames != meta.num_frames) {
          throw ValidationError("frame count " + std::to_string(frames.num_frames) + " != num_frames " +
                                std::to_string(meta.num_frames));
        }
        p = extract_pyramid(frames, cfg.sampling, backbone);
      }
      io::write_features(feature_path(a.out_dir, meta.id), p);
    } catch (const ValidationError& e) {
      throw ValidationError("video '" + meta.id + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("video '" + meta.id + "': " + e.what());
    }
  });
  out << "extracted " << corpus.videos.size() << " feature files to " << a.out_dir << '\n';
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string corpus;
  std::string features_dir;
  std::string out;
  std::string loss_log;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs_hi, epochs_lo;
};

std::vector<TrainingSample> load_samples(const Corpus& corpus, const fs::path& dir, const ModelConfig& mc) {
  // Pre-flight: every file present with a matching header.
  for (const auto& v : corpus.videos) {
    const auto p = feature_path(dir, v.meta.id);
    if (!fs::exists(p)) throw ValidationError("video '" + v.meta.id + "': missing feature file " + p.string());
    const auto h = io::read_feature_header(p);
    if (h.dim != static_cast<std::uint32_t>(mc.input_dim) || h.scales != static_cast<std::uint32_t>(mc.scales) ||
        h.base_scale != static_cast<std::uint32_t>(mc.base_scale)) {
      throw ConfigError("video '" + v.meta.id + "': feature header (d=" + std::to_string(h.dim) +
                        ", S=" + std::to_string(h.scales) + ", K_1=" + std::to_string(h.base_scale) +
                        ") does not match model (d=" + std::to_string(mc.input_dim) + ", S=" +
                        std::to_string(mc.scales) + ", K_1=" + std::to_string(mc.base_scale) + ")");
    }
  }
  std::vector<TrainingSample> samples;
  for (const auto& v : corpus.videos) samples.push_back({io::read_features(feature_path(dir, v.meta.id)), v.segments});
  return samples;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.common);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs_hi) cfg.train.epochs_hi = *a.epochs_hi;
  if (a.epochs_lo) cfg.train.epochs_lo = *a.epochs_lo;
  cfg.validate();
  const Corpus corpus = io::load_corpus(a.corpus);
  const ModelConfig mc = cfg.model_for(corpus.num_classes());
  const auto samples = load_samples(corpus, a.features_dir, mc);

  Model model(mc);
  model.init(cfg.train.seed);
  std::optional<std::ofstream> log;
  if (!a.loss_log.empty()) {
    const bool fresh = !fs::exists(a.loss_log) || fs::file_size(a.loss_log) == 0;
    log.emplace(a.loss_log, std::ios::app);
    if (!*log) throw IoError("cannot open loss log " + a.loss_log);
    if (fresh) *log << "epoch,learning_rate,loss\n";
  }
  train(samples, model, cfg.train, [&](int epoch, double loss, double lr) {
    out << "epoch " << epoch + 1 << " lr " << lr << " loss " << loss << '\n';
    if (log) *log << epoch + 1 << ',' << lr << ',' << loss << '\n';
  });
  save_checkpoint(a.out, model);
  out << "checkpoint written to " << a.out << '\n';
  return kOk;
}

// ---- detect ---------------------------------------------------------------

struct DetectArgs {
  Common common;
  std::string checkpoint;
  std::string corpus;
  std::string features_dir;
  std::string out;
  std::optional<double> nms_threshold, score_floor;
  std::optional<std::size_t> top_k;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.common);
  if (a.nms_threshold) cfg.nms.threshold = *a.nms_threshold;
  if (a.score_floor) cfg.nms.score_floor = *a.score_floor;
  if (a.top_k) cfg.nms.top_k = *a.top_k;
  cfg.validate();
  const Model model = load_checkpoint(a.checkpoint);
  const Corpus corpus = io::load_corpus(a.corpus);
  if (model.config().num_classes != corpus.num_classes()) {
    throw ConfigError("checkpoint predicts " + std::to_string(model.config().num_classes) + " classes, corpus has " +
                      std::to_string(corpus.num_classes()));
  }
  for (const auto& v : corpus.videos) {
    const auto p = feature_path(a.features_dir, v.meta.id);
    if (!fs::exists(p)) throw ValidationError("video '" + v.meta.id + "': missing feature file " + p.string());
    const auto h = io::read_feature_header(p);
    const auto& mc = model.config();
    if (h.dim != static_cast<std::uint32_t>(mc.input_dim) || h.scales != static_cast<std::uint32_t>(mc.scales) ||
        h.base_scale != static_cast<std::uint32_t>(mc.base_scale)) {
      throw ConfigError("video '" + v.meta.id + "': feature header (d=" + std::to_string(h.dim) + ", S=" +
                        std::to_string(h.scales) + ", K_1=" + std::to_string(h.base_scale) +
                        ") does not match checkpoint (d=" + std::to_string(mc.input_dim) + ", S=" +
                        std::to_string(mc.scales) + ", K_1=" + std::to_string(mc.base_scale) + ")");
    }
  }
  std::vector<std::vector<Detection>> per_video(corpus.videos.size());
  parallel_for(corpus.videos.size(), a.common.jobs, [&](std::size_t i) {
    const auto p = io::read_features(feature_path(a.features_dir, corpus.videos[i].meta.id));
    per_video[i] = detect_video(p, model, cfg.nms);
  });
  io::DetectionResults results;
  std::size_t total = 0;
  for (std::size_t i = 0; i < per_video.size(); ++i) {
    total += per_video[i].size();
    results[corpus.videos[i].meta.id] = std::move(per_video[i]);
  }
  io::write_detections(a.out, results, corpus);
  out << "wrote " << total << " detections for " << results.size() << " videos to " << a.out << '\n';
  return kOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string detections;
  std::string corpus;
  std::string out_json;
  std::string out_csv;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Corpus corpus = io::load_corpus(a.corpus);
  const auto results = io::read_detections(a.detections, corpus);
  const EvalReport report = evaluate(results, corpus, default_thresholds(), a.common.jobs);
  for (std::size_t c = 0; c < corpus.labels.size(); ++c) {
    if (!report.class_has_gt[c]) out << "warning: class '" << corpus.labels[c] << "' has no ground truth; excluded\n";
  }
  out << report_to_table(report);
  if (!a.out_json.empty()) io::write_file(a.out_json, report_to_json(report));
  if (!a.out_csv.empty()) io::write_file(a.out_csv, report_curves_csv(report));
  return kOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckArgs {
  std::string size = "tiny";
  std::string fault = "none";
  std::uint64_t seed = 7;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions opts;
  opts.seed = a.seed;
  if (a.fault == "conv-sign") opts.fault = Fault::ConvBackwardSign;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_gradcheck_suite(opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& e : report.entries) {
    out << (e.passed ? "PASS " : "FAIL ") << e.name << "  max_rel_err=" << e.max_relative_error
        << "  coords=" << e.checked << '\n';
  }
  out << "gradcheck " << (report.all_passed() ? "passed" : "FAILED") << " in " << secs << " s\n";
  return report.all_passed() ? kOk : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic temporal pyramid network: extraction, training, detection and evaluation", "dtpn"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "run config (section.key = value)")->check(CLI::ExistingFile);
    sub->add_option("--jobs,-j", c.jobs, "parallel workers for per-video work")->check(CLI::PositiveNumber);
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "emit a deterministic synthetic corpus with raw frames");
  add_common(s, synth.common);
  s->add_option("--out-dir", synth.out_dir)->required();
  s->add_option("--seed", synth.seed);
  s->add_option("--videos", synth.videos)->check(CLI::PositiveNumber);
  s->add_option("--classes", synth.classes)->check(CLI::Range(2, 1000));
  s->add_option("--max-instances", synth.max_instances)->check(CLI::PositiveNumber);

  ExtractArgs extract;
  auto* e = app.add_subcommand("extract", "build one feature pyramid file per video");
  add_common(e, extract.common);
  e->add_option("--corpus", extract.corpus)->required();
  e->add_option("--frames-dir", extract.frames_dir, "directory with <id>.frames or <id>/ frame records");
  e->add_option("--features-in", extract.features_in, "pass through existing <id>.dtpf files");
  e->add_option("--out-dir", extract.out_dir)->required();
  e->add_option("--seed", extract.seed, "backbone seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on extracted features");
  add_common(t, tr.common);
  t->add_option("--corpus", tr.corpus)->required();
  t->add_option("--features-dir", tr.features_dir)->required();
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--loss-log", tr.loss_log, "CSV file receiving per-epoch loss");
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs-hi", tr.epochs_hi);
  t->add_option("--epochs-lo", tr.epochs_lo);

  DetectArgs det;
  auto* d = app.add_subcommand("detect", "run a checkpoint over feature files");
  add_common(d, det.common);
  d->add_option("--checkpoint", det.checkpoint)->required();
  d->add_option("--corpus", det.corpus)->required();
  d->add_option("--features-dir", det.features_dir)->required();
  d->add_option("--out", det.out)->required();
  d->add_option("--nms-threshold", det.nms_threshold);
  d->add_option("--top-k", det.top_k);
  d->add_option("--score-floor", det.score_floor);

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "ActivityNet-style mAP over tIoU 0.50:0.05:0.95");
  add_common(v, ev.common);
  v->add_option("--detections", ev.detections)->required();
  v->add_option("--corpus", ev.corpus)->required();
  v->add_option("--out-json", ev.out_json);
  v->add_option("--out-csv", ev.out_csv, "precision-recall points");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every kernel and the full loss");
  g->add_option("--size", gc.size)->check(CLI::IsMember({"tiny"}));
  g->add_option("--seed", gc.seed);
  g->add_option("--inject-fault", gc.fault)->check(CLI::IsMember({"none", "conv-sign"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (e->parsed()) return cmd_extract(extract, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (d->parsed()) return cmd_detect(det, out);
    if (v->parsed()) return cmd_eval(ev, out);
    if (g->parsed()) return cmd_gradcheck(gc, out);
  } catch (const NumericalError& ex) {
    err << "numerical failure: " << ex.what() << '\n';
    return kNumerical;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return kValidation;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << '\n';
    return kValidation;
  }
  return kValidation;
}

}  // namespace dtpn::cli
