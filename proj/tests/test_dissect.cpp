#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "xinc/dissect.hpp"
#include "xinc/ops.hpp"

using namespace xinc;

namespace {

NervConfig two_block_config() {
  NervConfig c;
  c.height = 16;
  c.width = 24;
  c.strides = {2, 2};
  c.pe_length = 6;
  c.stem_hidden = 10;
  c.widths = {4, 3, 2};
  return c;
}

template <typename T>
void randomize_biases(NervModel<T>& m) {
  SeededRng rng(77);
  for (auto& b : m.blocks)
    for (auto& v : b.bias.values()) v = static_cast<T>(rng.uniform(-0.2, 0.2));
  for (auto& v : m.head.bias.values()) v = static_cast<T>(rng.uniform(-0.2, 0.2));
}

/// Naive zero-padded k x k box sum of one plane.
std::vector<long double> naive_box(const std::vector<long double>& in, long h, long w, long k) {
  std::vector<long double> out(in.size(), 0.0L);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long dy = -k / 2; dy <= k / 2; ++dy)
        for (long dx = -k / 2; dx <= k / 2; ++dx) {
          if (y + dy < 0 || y + dy >= h || x + dx < 0 || x + dx >= w) continue;
          out[y * w + x] += in[(y + dy) * w + x + dx];
        }
  return out;
}

std::vector<long double> naive_upsample(const std::vector<long double>& in, long h, long w, long r) {
  std::vector<long double> out(in.size() * r * r);
  for (long y = 0; y < h * r; ++y)
    for (long x = 0; x < w * r; ++x) out[y * w * r + x] = in[(y / r) * w + x / r];
  return out;
}

}  // namespace

TEST_SUITE("dissect") {
  TEST_CASE("mlp maps plus bias reproduce every pre-activation") {
    auto m = build_ffn<float>(3);
    for (auto& l : m.layers) {
      SeededRng rng(l.outputs() + 1);
      for (auto& b : l.bias.values()) b = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    const std::size_t h = 8, w = 12;
    FfnTrace<float> trace;
    forward_ffn(m, pixel_grid<float>(h, w), &trace);
    const auto canvas = canvas_ffn(m, h, w, 5);
    REQUIRE(canvas.layers.size() == 3);
    CHECK(canvas.layer_ids() == std::vector<std::string>{"layer1", "layer2", "layer3"});
    CHECK(canvas.layers[0].count() == 104);
    CHECK(canvas.layers[1].count() == 104);
    CHECK(canvas.layers[2].count() == 3);
    CHECK(canvas.frame_index == 5);
    double worst = 0;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto& layer = canvas.layers[l];
      for (std::size_t j = 0; j < layer.count(); ++j)
        for (std::size_t p = 0; p < h * w; ++p) {
          const double pre = trace.pre[l].at(p, j);
          const double got = static_cast<double>(layer.map_ptr(j)[p]) + m.layers[l].bias[j];
          worst = std::max(worst, std::abs(got - pre) / std::max(std::abs(pre), 1e-6));
        }
    }
    CHECK(worst <= 1e-5);
  }

  TEST_CASE("single-input toy gives v * w at every pixel") {
    FfnConfig cfg;
    cfg.frequencies = 1;
    cfg.hidden = {1};
    cfg.outputs = 1;
    auto m = build_ffn<double>(0, cfg);
    m.encoder.frequencies.fill(0.0);  // encoding is (cos 0, sin 0) = (1, 0) everywhere
    m.layers[0].weight = TensorD({2, 1}, std::vector<double>{2.0, 5.0});
    m.layers[0].bias.fill(0.0);
    m.layers[1].weight = TensorD({1, 1}, std::vector<double>{3.0});
    const auto layer = mlp_layer(m, 2, 3, 4);
    REQUIRE(layer.count() == 1);
    for (float v : layer.maps.values()) CHECK(v == 6.0f);
  }

  TEST_CASE("zero weight column gives an all-zero map") {
    auto m = build_ffn<float>(1);
    for (std::size_t i = 0; i < m.layers[1].inputs(); ++i) m.layers[1].weight.at(i, 7) = 0.0f;
    const auto maps = mlp_contributions(m, 2, 4, 4, 0);
    REQUIRE(maps.size() == 104);
    for (float v : maps[7].grid.values()) CHECK(v == 0.0f);
    CHECK(maps[7].layer_id == "layer2");
    CHECK(maps[7].neuron_id == 7);
  }

  TEST_CASE("invalid layers are rejected") {
    const auto m = build_ffn<float>(0);
    CHECK_THROWS_AS(mlp_layer(m, 0, 4, 4), ArgumentError);
    CHECK_THROWS_AS(mlp_layer(m, 4, 4, 4), ArgumentError);
    CHECK_THROWS_AS(canvas_ffn(FfnModel<float>{}, 4, 4), ArgumentError);
    const auto n = build_nerv<float>(0, two_block_config());
    CHECK_THROWS_AS(block_contributions(n, 3, 0, 1), ArgumentError);
    CHECK_THROWS_AS(block_contributions(n, 0, 0, 1), ArgumentError);
  }

  TEST_CASE("unrolled maps: mask exactness, completeness and phase sums") {
    auto m = build_nerv<double>(5, two_block_config());
    randomize_biases(m);
    NervTrace<double> trace;
    forward_nerv(m, 1, 3, &trace);
    for (std::size_t b = 1; b <= 2; ++b) {
      CAPTURE(b);
      const auto& input = trace.block_input[b - 1];
      const auto u = unroll_block(m, b, input);
      const std::size_t r = u.stride, cin = u.in_channels, cout = u.out_channels;
      const std::size_t H = u.maps.dim(1), W = u.maps.dim(2), h = input.dim(1), w = input.dim(2);
      REQUIRE(u.maps.dim(0) == cin * cout);
      REQUIRE(H == h * r);

      // One eligible position per r x r cell, at the kernel's phase.
      std::size_t bad_cells = 0;
      for (std::size_t j = 0; j < cin * cout; ++j) {
        const auto [oy, ox] = u.offset_of(j);
        CHECK(u.phase_of(j) == (j / cin) % (r * r));
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const bool eligible = y % r == oy && x % r == ox;
            if (!eligible && u.maps.at(j, y, x) != 0.0) ++bad_cells;
          }
      }
      CHECK(bad_cells == 0);

      // Per-kernel maps against a sliding-window oracle, placed by hand.
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci) {
          TensorD x1({1, h, w}), k1({1, 1, 3, 3});
          std::copy_n(input.ptr() + ci * h * w, h * w, x1.ptr());
          std::copy_n(m.blocks[b - 1].weight.ptr() + (co * cin + ci) * 9, 9, k1.ptr());
          const auto ref = oracle::conv2d(x1, k1);
          const std::size_t p = co % (r * r), dy = p / r, dx = p % r;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
              REQUIRE(std::abs(u.maps.at(co * cin + ci, y * r + dy, x * r + dx) - static_cast<double>(ref[y * w + x])) <
                      1e-12);
            }
        }

      // Summing over input channels and phases, plus the shuffled bias, gives
      // the block's pre-activation.
      const auto& pre = trace.block_pre[b - 1];
      const std::size_t cnext = cout / (r * r);
      double worst = 0;
      for (std::size_t c = 0; c < cnext; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            long double acc = 0;
            for (std::size_t p = 0; p < r * r; ++p) {
              const std::size_t co = c * r * r + p;
              for (std::size_t ci = 0; ci < cin; ++ci) acc += u.maps.at(co * cin + ci, y, x);
            }
            acc += m.blocks[b - 1].bias[c * r * r + (y % r) * r + x % r];
            const double want = pre.at(c, y, x);
            worst = std::max(worst, std::abs(static_cast<double>(acc) - want) / std::max(std::abs(want), 1e-9));
          }
      CHECK(worst <= 1e-10);

      // Phase copies summed before masking equal the pixel shuffle of the summed conv.
      TensorD summed({cout, h, w});
      const auto per_kernel = conv2d_per_kernel(input, m.blocks[b - 1].weight);
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t q = 0; q < h * w; ++q) summed[co * h * w + q] += per_kernel[(co * cin + ci) * h * w + q];
      TensorD phase_sum({cnext, H, W});
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) phase_sum.at(co / (r * r), y, x) += u.maps.at(co * cin + ci, y, x);
      CHECK(oracle::max_abs_diff(phase_sum.values(), pixel_shuffle(summed, static_cast<int>(r)).values()) < 1e-12);
    }
  }

  TEST_CASE("block maps follow activation, box filter and nearest upsampling") {
    auto m = build_nerv<double>(6, two_block_config());
    NervTrace<double> trace;
    forward_nerv(m, 0, 2, &trace);
    const auto layer = block_contributions(m, 1, 0, 2);
    const auto u = unroll_block(m, 1, trace.block_input[0]);
    REQUIRE(layer.count() == u.maps.dim(0));
    CHECK(layer.height() == 16);
    CHECK(layer.width() == 24);
    CHECK(layer.in_channels == 4);
    const long h1 = static_cast<long>(u.maps.dim(1)), w1 = static_cast<long>(u.maps.dim(2));
    double worst = 0;
    for (std::size_t j = 0; j < layer.count(); j += 7) {
      std::vector<long double> plane(h1 * w1);
      for (long i = 0; i < h1 * w1; ++i) plane[i] = activate<double>(u.maps[j * h1 * w1 + i], Activation::gelu);
      auto next = naive_upsample(naive_box(plane, h1, w1, 3), h1, w1, 2);
      next = naive_box(next, 2 * h1, 2 * w1, 3);
      for (std::size_t i = 0; i < next.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(next[i]) - layer.map_ptr(j)[i]) /
                                    std::max(1e-6, std::abs(static_cast<double>(next[i]))));
      }
    }
    CHECK(worst < 1e-5);
  }

  TEST_CASE("head maps are activated per-kernel convolutions") {
    auto m = build_nerv<double>(8, two_block_config());
    randomize_biases(m);
    NervTrace<double> trace;
    forward_nerv(m, 2, 3, &trace);
    const auto head = head_contributions(m, 2, 3);
    REQUIRE(head.count() == 2 * 3);
    CHECK(head.in_channels == 2);
    const auto per_kernel = conv2d_per_kernel(trace.head_input, m.head.weight);
    const std::size_t plane = 16 * 24;
    double worst_act = 0, worst_pre = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        long double pre = m.head.bias[c];
        for (std::size_t ci = 0; ci < 2; ++ci) {
          const double z = per_kernel[(c * 2 + ci) * plane + p];
          pre += z;
          const double want = 1.0 / (1.0 + std::exp(-z));
          worst_act = std::max(worst_act, std::abs(head.map_ptr(c * 2 + ci)[p] - want));
        }
        const double truth = trace.head_pre[c * plane + p];
        worst_pre = std::max(worst_pre, std::abs(static_cast<double>(pre) - truth) / std::max(std::abs(truth), 1e-9));
      }
    CHECK(worst_act < 1e-7);
    CHECK(worst_pre <= 1e-5);
  }

  TEST_CASE("single input channel head equals the activated zero-bias conv") {
    NervConfig c = two_block_config();
    c.widths = {4, 3, 1};
    auto m = build_nerv<double>(9, c);
    randomize_biases(m);
    NervTrace<double> trace;
    forward_nerv(m, 0, 1, &trace);
    auto no_bias = m.head;
    no_bias.bias.fill(0.0);
    const auto want = activation(conv2d(trace.head_input, no_bias.weight, no_bias.bias), Activation::sigmoid);
    const auto head = head_contributions(m, 0, 1);
    REQUIRE(head.count() == 3);
    CHECK(oracle::max_abs_diff(head.maps.values(), want.values()) < 1e-7);
  }

  TEST_CASE("stride 1 and 1x1 kernels collapse to the activated per-kernel maps") {
    NervConfig c;
    c.height = 4;
    c.width = 6;
    c.strides = {1, 1};
    c.block_kernel = 1;
    c.head_kernel = 1;
    c.pe_length = 4;
    c.stem_hidden = 6;
    c.widths = {3, 2, 2};
    const auto m = build_nerv<double>(4, c);
    NervTrace<double> trace;
    forward_nerv(m, 0, 1, &trace);
    for (std::size_t b = 1; b <= 2; ++b) {
      const auto want = activation(conv2d_per_kernel(trace.block_input[b - 1], m.blocks[b - 1].weight), Activation::gelu);
      const auto got = block_contributions(m, b, 0, 1);
      CHECK(oracle::max_abs_diff(got.maps.values(), want.values()) < 1e-7);
    }
  }

  TEST_CASE("nerv canvas layout and reproducibility") {
    const auto m = build_nerv<float>(2, two_block_config());
    const auto a = canvas_nerv(m, 1, 4);
    const auto b = canvas_nerv(m, 1, 4);
    CHECK(a.layer_ids() == std::vector<std::string>{"block1", "block2", "head"});
    CHECK(a.layer("block1").count() == 4 * 3 * 4);
    CHECK(a.layer("block2").count() == 3 * 2 * 4);
    CHECK(a.layer("head").count() == 2 * 3);
    for (const auto& l : a.layers) {
      CHECK(l.height() == 16);
      CHECK(l.width() == 24);
    }
    CHECK(a.content_hash() == b.content_hash());
    CHECK(a.layer("head").maps == head_contributions(m, 1, 4).maps);
    CHECK_THROWS_AS(a.layer("block9"), ArgumentError);
    CHECK(a.content_hash() != canvas_nerv(m, 2, 4).content_hash());
  }
}
