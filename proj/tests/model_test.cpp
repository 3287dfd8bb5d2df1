#include <doctest.h>

#include "dtpn/error.hpp"
#include "dtpn/model.hpp"
#include "test_util.hpp"

using namespace dtpn;

namespace {

ModelConfig config(int s, int k, int d, int m, int filters = 64) {
  ModelConfig c;
  c.scales = s;
  c.base_scale = k;
  c.input_dim = d;
  c.num_classes = m;
  c.branch_filters = filters;
  return c;
}

bool rows_equal(const Grad2<float>& a, std::size_t ra, const Grad2<float>& b, std::size_t rb, std::size_t c0,
                std::size_t c1) {
  for (std::size_t c = c0; c < c1; ++c) {
    if (a.at(ra, c) != b.at(rb, c)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config arithmetic") {
    const auto c = config(5, 16, 32, 5);
    CHECK(c.depth() == 5);
    CHECK(c.conv_width() == 320);
    CHECK(c.pool_width() == 160);
    CHECK(c.fused_width() == 480);
    CHECK(c.enhanced_width() == 1440);
    CHECK(c.head_channels() == 8);
    CHECK(c.num_anchors() == 31);
    CHECK_THROWS_AS(config(5, 12, 32, 5).validate(), ConfigError);
  }

  TEST_CASE("convolution branch shapes") {
    Rng rng(1);
    Model m(config(5, 16, 32, 5));
    m.init(1);
    ForwardState<float> st = m.forward(testing::random_pyramid(rng, 5, 16, 32));
    REQUIRE(st.conv.size() == 5);
    CHECK(st.conv[0].steps == 16);
    CHECK(st.conv[0].channels == 320);
    const std::size_t dims[] = {16, 8, 4, 2, 1};
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(st.conv[i].steps == dims[i]);
      CHECK(st.pool[i].steps == dims[i]);
      CHECK(st.fused[i].steps == dims[i]);
      CHECK(st.heads[i].steps == dims[i]);
      CHECK(st.heads[i].channels == 8);
    }
    // scale 5: 256 rows, kernel 17, stride 16
    CHECK(st.scale_pre[4].steps == 16);
    CHECK(st.scale_pre[0].steps == 16);
  }

  TEST_CASE("pooling branch at d = 2048") {
    ModelConfig c = config(5, 16, 2048, 2, 4);
    c.branches = BranchMode::PoolOnly;
    Model m(c);
    PyramidFeature constant;
    for (int s = 0; s < 5; ++s) constant.levels.emplace_back(std::size_t{16} << s, 2048, 0.5f);
    const auto st = m.forward(constant);
    CHECK(st.pool[0].steps == 16);
    CHECK(st.pool[0].channels == 10240);
    CHECK(st.pool[4].steps == 1);
    CHECK(st.pool[4].channels == 10240);
    for (const auto& lvl : st.pool) {
      for (std::size_t r = 1; r < lvl.steps; ++r) CHECK(rows_equal(lvl, r, lvl, 0, 0, lvl.channels));
    }
  }

  TEST_CASE("fused width is the channel sum") {
    ModelConfig c = config(5, 16, 2048, 2, 64);
    CHECK(c.conv_width() + c.pool_width() == 10560);
    CHECK(c.fused_width() == 10560);
  }

  TEST_CASE("fusion keeps conv channels first") {
    Rng rng(2);
    Model m(config(3, 4, 6, 2, 4));
    m.init(3);
    auto st = m.forward(testing::random_pyramid(rng, 3, 4, 6));
    for (auto& p : st.pool) std::fill(p.value.begin(), p.value.end(), 0.0f);
    m.fuse_branches(st);
    REQUIRE(st.fused.size() == st.conv.size());
    for (std::size_t i = 0; i < st.fused.size(); ++i) {
      for (std::size_t t = 0; t < st.fused[i].steps; ++t) CHECK(rows_equal(st.fused[i], t, st.conv[i], t, 0, 12));
    }
  }

  TEST_CASE("context enhancement layout") {
    Rng rng(4);
    Model m(config(3, 8, 5, 2, 3));
    m.init(5);
    auto st = m.forward(testing::random_pyramid(rng, 3, 8, 5));
    const std::size_t c = st.fused[0].channels;
    const std::size_t n = st.fused.size();
    REQUIRE(n == 4);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(st.enhanced[i].channels == 3 * c);
      for (std::size_t t = 0; t < st.enhanced[i].steps; ++t) {
        // own block
        for (std::size_t k = 0; k < c; ++k) CHECK(st.enhanced[i].at(t, k) == st.fused[i].at(t, k));
        // local block: cell t/2 of the next level (or C_N itself at the top)
        const auto& next = i + 1 < n ? st.fused[i + 1] : st.fused[n - 1];
        const std::size_t src = i + 1 < n ? t / 2 : 0;
        for (std::size_t k = 0; k < c; ++k) CHECK(st.enhanced[i].at(t, c + k) == next.at(src, k));
        // global block: the single C_N cell everywhere
        for (std::size_t k = 0; k < c; ++k) CHECK(st.enhanced[i].at(t, 2 * c + k) == st.fused[n - 1].at(0, k));
      }
    }
  }

  TEST_CASE("perturbing one cell of C_{i+1} touches exactly two local cells of C_i") {
    Rng rng(6);
    Model m(config(3, 8, 4, 2, 2));
    m.init(7);
    auto st = m.forward(testing::random_pyramid(rng, 3, 8, 4));
    const auto before = st.enhanced;
    const std::size_t c = st.fused[0].channels;
    st.fused[1].at(2, 0) += 1.0f;  // level 2, cell 2
    m.enhance_context(st);
    const auto& e0 = st.enhanced[0];
    std::vector<std::size_t> changed;
    for (std::size_t t = 0; t < e0.steps; ++t) {
      if (!rows_equal(e0, t, before[0], t, c, 2 * c)) changed.push_back(t);
    }
    CHECK(changed == std::vector<std::size_t>{4, 5});
  }

  TEST_CASE("head outputs and anchors align") {
    Rng rng(8);
    Model m(config(5, 16, 8, 3, 4));
    m.init(9);
    const auto st = m.forward(testing::random_pyramid(rng, 5, 16, 8));
    CHECK(st.heads[0].channels == 6);
    CHECK(m.predictions(st).size() == 31);
    CHECK(layout_anchors(m.config()).size() == 31);
  }

  TEST_CASE("zero network predicts zeros") {
    Rng rng(10);
    Model m(config(3, 4, 5, 4, 3));
    const auto preds = m.predictions(m.forward(testing::random_pyramid(rng, 3, 4, 5)));
    for (const auto& p : preds) {
      CHECK(p.act_logit == 0.0);
      CHECK(p.center_offset == 0.0);
      CHECK(p.length_offset == 0.0);
      for (double l : p.class_logits) CHECK(l == 0.0);
    }
  }

  TEST_CASE("anchor layout") {
    const auto anchors = layout_anchors(config(5, 16, 8, 2));
    REQUIRE(anchors.size() == 31);
    CHECK(anchors[0].level == 1);
    CHECK(anchors[0].center == 1.0 / 32.0);
    CHECK(anchors[0].length == 1.0 / 16.0);
    CHECK(anchors.back().level == 5);
    CHECK(anchors.back().interval() == Interval{0.0, 1.0});
    for (int k : {1, 2, 4, 8, 16, 32, 64}) CHECK(layout_anchors(config(2, k, 4, 2)).size() == static_cast<std::size_t>(2 * k - 1));
  }

  TEST_CASE("anchors tile [0,1] exactly at every level") {
    for (int k : {1, 2, 4, 16, 64}) {
      const auto anchors = layout_anchors(config(1, k, 4, 2));
      int level = 0;
      double cursor = 0.0;
      for (const auto& a : anchors) {
        if (a.level != level) {
          if (level != 0) CHECK(cursor == 1.0);
          level = a.level;
          cursor = 0.0;
        }
        const Interval iv = a.interval();
        CHECK(iv.start == cursor);
        CHECK(iv.start >= 0.0);
        CHECK(iv.end <= 1.0);
        cursor = iv.end;
      }
      CHECK(cursor == 1.0);
    }
  }

  TEST_CASE("end-to-end shapes across configurations") {
    Rng rng(11);
    for (int s : {3, 4, 5}) {
      for (int d : {8, 32}) {
        for (int mcls : {2, 5}) {
          Model m(config(s, 16, d, mcls, 8));
          m.init(12);
          const auto st = m.forward(testing::random_pyramid(rng, s, 16, d));
          REQUIRE(st.heads.size() == 5);
          for (std::size_t i = 0; i < 5; ++i) {
            CHECK(st.heads[i].steps == (std::size_t{16} >> i));
            CHECK(st.heads[i].channels == static_cast<std::size_t>(1 + mcls + 2));
            CHECK(st.heads[i].all_finite());
          }
        }
      }
    }
  }

  TEST_CASE("mismatched pyramid is rejected") {
    Rng rng(13);
    Model m(config(3, 4, 5, 2, 3));
    CHECK_THROWS_AS(m.forward(testing::random_pyramid(rng, 2, 4, 5)), ConfigError);
    CHECK_THROWS_AS(m.forward(testing::random_pyramid(rng, 3, 8, 5)), ConfigError);
    CHECK_THROWS_AS(m.forward(testing::random_pyramid(rng, 3, 4, 6)), ConfigError);
  }

  TEST_CASE("checkpoint round trip and seeded determinism") {
    testing::TempDir dir;
    ModelConfig c = config(3, 4, 6, 3, 5);
    c.global_context = false;
    Model a(c);
    a.init(99);
    save_checkpoint(dir / "a.dtpm", a);
    Model b = load_checkpoint(dir / "a.dtpm");
    CHECK(b.config() == c);
    CHECK(encode_checkpoint(b) == encode_checkpoint(a));
    Model again(c);
    again.init(99);
    CHECK(encode_checkpoint(again) == encode_checkpoint(a));
    Rng rng(1);
    const auto p = testing::random_pyramid(rng, 3, 4, 6);
    CHECK(a.forward(p).heads[0].value == b.forward(p).heads[0].value);

    std::string bytes = encode_checkpoint(a);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
    bytes[1] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bytes), ParseError);
  }

  TEST_CASE("float and double instantiations agree") {
    Rng rng(14);
    Model m(config(3, 4, 6, 2, 4));
    m.init(15);
    const auto p = testing::random_pyramid(rng, 3, 4, 6);
    const auto sf = m.forward(p);
    const auto sd = m.cast<double>().forward(p);
    for (std::size_t i = 0; i < sf.heads.size(); ++i) {
      for (std::size_t k = 0; k < sf.heads[i].value.size(); ++k) {
        CHECK(sf.heads[i].value[k] == doctest::Approx(sd.heads[i].value[k]).epsilon(1e-4));
      }
    }
  }
}
