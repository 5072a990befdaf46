#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "xinc/analysis.hpp"

using namespace xinc;

namespace {

CanvasLayer make_layer(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed, double lo = -1.0,
                       double hi = 1.0) {
  CanvasLayer l;
  l.id = "test";
  l.maps = oracle::random_tensor<float>({n, h, w}, seed, lo, hi);
  return l;
}

PixelClustering labels_clustering(std::size_t h, std::size_t w, std::vector<std::uint32_t> labels) {
  PixelClustering c;
  c.height = h;
  c.width = w;
  c.k = *std::max_element(labels.begin(), labels.end()) + 1;
  c.labels = std::move(labels);
  return c;
}

double two_pass_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double sq(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("hand-computed expected contribution") {
    // Image area 4, cluster 0 covers one pixel, total mass 8 with 3 in cluster 0.
    const auto c = labels_clustering(2, 2, {0, 1, 1, 1});
    const std::vector<float> map{3.0f, -1.0f, 2.0f, 2.0f};
    const auto d = contribution_deltas(map.data(), c);
    CHECK_FALSE(d.dead);
    CHECK(d.cont_image == 8.0);
    CHECK(d.actual[0] == 3.0);
    CHECK(d.expected[0] == 2.0);
    CHECK(d.normalized[0] == -0.5);
    CHECK(d.expected[1] == 6.0);
    CHECK(d.normalized[1] == doctest::Approx(1.0 / 6.0));
  }

  TEST_CASE("partition conservation for every clustering kind") {
    const std::size_t h = 16, w = 24;
    const auto frame = oracle::random_tensor<float>({3, h, w}, 5, 0.0, 1.0);
    std::vector<std::uint32_t> mask(h * w);
    for (std::size_t p = 0; p < h * w; ++p) mask[p] = (p % w) < 8 ? 0 : ((p / w) < 8 ? 3 : 9);
    const std::vector<PixelClustering> kinds{cluster_rgb(frame, 4, 1), cluster_gabor(frame, 4, 1),
                                             gridcells(h, w, 2, 4), instance_clusters(mask, h, w)};
    const auto layer = make_layer(5, h, w, 9);
    for (const auto& c : kinds) {
      CAPTURE(to_string(c.kind));
      const auto areas = c.areas();
      CHECK(std::accumulate(areas.begin(), areas.end(), std::size_t{0}) == h * w);
      for (std::size_t j = 0; j < layer.count(); ++j) {
        const auto d = contribution_deltas(layer.map_ptr(j), c);
        double sum_a = 0, sum_e = 0, direct = 0;
        for (double a : d.actual) sum_a += a;
        for (double e : d.expected) sum_e += e;
        for (std::size_t p = 0; p < h * w; ++p) direct += std::abs(static_cast<double>(layer.map_ptr(j)[p]));
        CHECK(sum_a == doctest::Approx(d.cont_image).epsilon(1e-12));
        CHECK(sum_e == doctest::Approx(d.cont_image).epsilon(1e-12));
        CHECK(direct == doctest::Approx(d.cont_image).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("uniform maps have zero delta spread and dead maps are excluded") {
    CanvasLayer l;
    l.id = "u";
    l.maps = Tensor({3, 4, 8}, 0.25f);
    for (std::size_t p = 0; p < 32; ++p) l.maps[32 + p] = p % 2 ? -0.5f : 0.5f;
    for (std::size_t p = 0; p < 32; ++p) l.maps[64 + p] = 0.0f;
    const auto s = layer_delta_variance(l, gridcells(4, 8, 2, 2));
    CHECK(s.per_neuron[0] == doctest::Approx(0.0));
    CHECK(s.per_neuron[1] == doctest::Approx(0.0));
    CHECK(std::isnan(s.per_neuron[2]));
    CHECK(s.dead == 1);
    CHECK(s.sorted.size() == 2);
    CHECK_THROWS_AS(layer_delta_variance(l, gridcells(4, 8, 1, 1)), ArgumentError);
  }

  TEST_CASE("delta spread matches a two-pass std oracle and is scale invariant") {
    const auto layer = make_layer(7, 8, 8, 3);
    const auto c = gridcells(8, 8, 2, 4);
    const auto s = layer_delta_variance(layer, c);
    CanvasLayer scaled = layer;
    for (auto& v : scaled.maps.values()) v *= 4.0f;
    const auto s2 = layer_delta_variance(scaled, c);
    for (std::size_t j = 0; j < 7; ++j) {
      std::vector<double> actual(8, 0.0);
      double total = 0;
      for (std::size_t p = 0; p < 64; ++p) {
        actual[c.labels[p]] += std::abs(layer.map_ptr(j)[p]);
        total += std::abs(layer.map_ptr(j)[p]);
      }
      std::vector<double> norm;
      for (double a : actual) norm.push_back((total / 8.0 - a) / (total / 8.0));
      CHECK(s.per_neuron[j] == doctest::Approx(two_pass_std(norm)).epsilon(1e-10));
      CHECK(s2.per_neuron[j] == doctest::Approx(s.per_neuron[j]).epsilon(1e-6));
    }
    const std::vector<double> sorted = s.sorted;
    CHECK(s.median() == sorted[3]);
  }

  TEST_CASE("gridcells") {
    const auto g = gridcells(128, 256, 4, 8);
    CHECK(g.k == 32);
    for (auto a : g.areas()) CHECK(a == 32 * 32);
    CHECK(g.labels[0] == 0);
    CHECK(g.labels[255] == 7);
    CHECK(g.labels[127 * 256 + 255] == 31);
    CHECK(gridcells(4, 4, 1, 1).k == 1);
    CHECK_THROWS_AS(gridcells(128, 256, 3, 8), ArgumentError);
  }

  TEST_CASE("instance clusters follow the mask histogram") {
    const std::vector<std::uint32_t> mask{1, 1, 2, 7, 7, 7};
    const auto c = instance_clusters(mask, 2, 3);
    CHECK(c.k == 3);
    CHECK(c.mask_ids == std::vector<std::uint32_t>{1, 2, 7});
    CHECK(c.areas() == std::vector<std::size_t>{2, 1, 3});
    CHECK_THROWS(instance_clusters({}, 0, 0));
  }

  TEST_CASE("rgb clustering splits a two-tone image and flags constant images") {
    Tensor f({3, 4, 6});
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const float v = x < 2 ? 0.1f : 0.9f;
        for (std::size_t c = 0; c < 3; ++c) f.at(c, y, x) = v;
      }
    const auto c = cluster_rgb(f, 2, 0);
    CHECK(c.k == 2);
    for (std::size_t p = 0; p < 24; ++p) CHECK((c.labels[p] == c.labels[0]) == (p % 6 < 2));
    const auto flat = cluster_rgb(Tensor({3, 4, 6}, 0.3f), 2, 0);
    CHECK(flat.k == 1);
    CHECK_FALSE(flat.warnings.empty());
    CHECK_THROWS_AS(cluster_rgb(f, 1, 0), ArgumentError);
  }

  TEST_CASE("k-means is locally optimal and beats random assignment") {
    SeededRng rng(4);
    const std::size_t n = 400, dim = 3;
    std::vector<double> pts(n * dim);
    for (auto& v : pts) v = rng.uniform();
    const auto r = kmeans(pts, dim, 5, 11);
    REQUIRE(r.k == 5);
    for (std::size_t i = 0; i < n; ++i) {
      const double own = sq(&pts[i * dim], &r.centroids[r.labels[i] * dim], dim);
      for (std::size_t c = 0; c < r.k; ++c) REQUIRE(own <= sq(&pts[i * dim], &r.centroids[c * dim], dim) + 1e-12);
    }
    // Centroids are the cluster means.
    std::vector<double> mean(r.k * dim, 0.0);
    std::vector<std::size_t> count(r.k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[r.labels[i]];
      for (std::size_t d = 0; d < dim; ++d) mean[r.labels[i] * dim + d] += pts[i * dim + d];
    }
    for (std::size_t c = 0; c < r.k; ++c)
      for (std::size_t d = 0; d < dim; ++d) CHECK(mean[c * dim + d] / count[c] == doctest::Approx(r.centroids[c * dim + d]).epsilon(1e-3));
    // Random labelling with its own means.
    std::vector<double> rmean(5 * dim, 0.0);
    std::vector<std::size_t> rcount(5, 0), rl(n);
    for (std::size_t i = 0; i < n; ++i) {
      rl[i] = rng.below(5);
      ++rcount[rl[i]];
      for (std::size_t d = 0; d < dim; ++d) rmean[rl[i] * dim + d] += pts[i * dim + d];
    }
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t d = 0; d < dim; ++d) rmean[c * dim + d] /= static_cast<double>(rcount[c]);
    double random_obj = 0;
    for (std::size_t i = 0; i < n; ++i) random_obj += sq(&pts[i * dim], &rmean[rl[i] * dim], dim);
    CHECK(r.inertia < random_obj);
    const auto again = kmeans(pts, dim, 5, 11);
    CHECK(again.labels == r.labels);
  }

  TEST_CASE("gabor features respond to stripe orientation") {
    const std::size_t h = 48, w = 48;
    Tensor f({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const float v = 0.5f + 0.5f * static_cast<float>(std::cos(2 * 3.14159265358979 * x / 8.0));
        for (std::size_t c = 0; c < 3; ++c) f.at(c, y, x) = v;
      }
    const auto bank = GaborBank::standard();
    REQUIRE(bank.filters.size() == 12);
    const auto feats = bank.features(grayscale(f), h, w);
    REQUIRE(feats.size() == h * w * 12);
    double vertical = 0, horizontal = 0;
    for (std::size_t y = 16; y < 32; ++y)
      for (std::size_t x = 16; x < 32; ++x) {
        const double* v = &feats[(y * w + x) * 12];
        vertical += v[0 * 3 + 1];
        horizontal += v[2 * 3 + 1];
        REQUIRE(v[1] >= v[7]);
      }
    CHECK(vertical > 10 * horizontal);
    for (const auto& flt : bank.filters) {
      CHECK(flt.size % 2 == 1);
      CHECK(std::abs(std::accumulate(flt.real.begin(), flt.real.end(), 0.0)) < 1e-12);
    }
    const auto flat = bank.features(std::vector<double>(h * w, 0.4), h, w);
    for (double v : flat) REQUIRE(std::abs(v) < 1e-9);
    const auto gc = cluster_gabor(Tensor({3, 8, 8}, 0.4f), 3, 0);
    CHECK(gc.k == 1);
  }

  TEST_CASE("pixel shares: strict threshold and brute force") {
    CanvasLayer eq;
    eq.id = "eq";
    eq.maps = Tensor({2, 3, 3}, 1.0f);
    CHECK(pixels_per_neuron(eq).counts == std::vector<std::size_t>{0, 0});

    CanvasLayer dom;
    dom.id = "dom";
    dom.maps = Tensor({3, 3, 3}, 0.0f);
    for (std::size_t p = 0; p < 9; ++p) dom.maps[9 + p] = 2.0f;
    CHECK(pixels_per_neuron(dom).counts == std::vector<std::size_t>{0, 9, 0});

    const auto l = make_layer(6, 5, 7, 8);
    const auto got = pixels_per_neuron(l, 16);
    std::vector<std::size_t> want(6, 0);
    for (std::size_t p = 0; p < 35; ++p) {
      double t = 0;
      for (std::size_t j = 0; j < 6; ++j) t += std::abs(l.map_ptr(j)[p]);
      for (std::size_t j = 0; j < 6; ++j) want[j] += std::abs(l.map_ptr(j)[p]) / t > 1.0 / 6.0;
    }
    CHECK(got.counts == want);
    CHECK(std::is_sorted(got.sorted.begin(), got.sorted.end()));
    CHECK(got.curve.size() == 16);
    CHECK(got.curve.front() == got.sorted.front());
    CHECK(got.curve.back() == got.sorted.back());
  }

  TEST_CASE("linear resampling") {
    CHECK(resample_linear({0.0, 10.0}, 5) == std::vector<double>{0.0, 2.5, 5.0, 7.5, 10.0});
    CHECK(resample_linear({3.0}, 3) == std::vector<double>{3.0, 3.0, 3.0});
  }

  TEST_CASE("mass percentile uses cumulative mass") {
    CHECK(mass_percentile({1, 1, 2, 4}, 50) == 4.0);
    CHECK(mass_percentile({4, 1, 2, 1}, 50) == 4.0);
    CHECK(mass_percentile({1, 1, 2, 4}, 10) == 1.0);
    CHECK(mass_percentile({1, 1, 2, 4}, 1e-9) == 1.0);
    CHECK(mass_percentile({0, 0, 3, 5}, 1e-9) == 3.0);
    CHECK(mass_percentile({2, 2, 2}, 10) == 2.0);
    CHECK(mass_percentile({2, 2, 2}, 90) == 2.0);
    CHECK(mass_percentile({0, 0}, 50) == 0.0);
    CHECK(mass_percentile({-4, 1, -1, 2}, 50) == 4.0);
    CHECK_THROWS_AS(mass_percentile({1}, 0), ArgumentError);
    CHECK_THROWS_AS(mass_percentile({1}, 100), ArgumentError);

    CanvasLayer l;
    l.id = "m";
    l.maps = Tensor({2, 1, 2}, std::vector<float>{1, -1, 2, 4});
    CHECK(contribution_mass_percentile(l, 50) == 4.0);
    CHECK(contribution_mass_percentiles(l, {10, 50}) == std::vector<double>{1.0, 4.0});
  }

  TEST_CASE("neurons per pixel") {
    const auto pos = make_layer(4, 3, 5, 2, 0.1, 1.0);
    const auto all = neurons_per_pixel(pos, 0.0);
    for (float v : all.values()) CHECK(v == 100.0f);
    const auto none = neurons_per_pixel(pos, INFINITY);
    for (float v : none.values()) CHECK(v == 0.0f);
    const auto l = make_layer(8, 4, 4, 6);
    const double tau = 0.4;
    const auto got = neurons_per_pixel(l, tau);
    for (std::size_t p = 0; p < 16; ++p) {
      int c = 0;
      for (std::size_t j = 0; j < 8; ++j) c += std::abs(l.map_ptr(j)[p]) > tau;
      CHECK(got[p] == doctest::Approx(100.0 * c / 8.0));
    }
  }

  TEST_CASE("intensity delta") {
    const auto frame = oracle::random_tensor<float>({3, 4, 4}, 12, 0.0, 1.0);
    CanvasLayer prop;
    prop.id = "p";
    prop.maps = Tensor({2, 4, 4});
    for (std::size_t p = 0; p < 16; ++p) {
      const float i = frame[p] + frame[16 + p] + frame[32 + p];
      prop.maps[p] = 2.0f * i;
      prop.maps[16 + p] = -i;
    }
    const auto pd = intensity_delta(prop, frame);
    for (float v : pd.delta.values()) CHECK(std::abs(v) < 1e-5);

    CanvasLayer zero;
    zero.id = "z";
    zero.maps = Tensor({2, 4, 4});
    const auto d = intensity_delta(zero, frame);
    CHECK(d.sum_degenerate);
    for (std::size_t p = 0; p < 16; ++p) CHECK(d.delta[p] == doctest::Approx(-d.intensity_norm[p]));

    bool degenerate = false;
    const auto n = minmax_normalize(Tensor({3}, std::vector<float>{2, 4, 3}), &degenerate);
    CHECK_FALSE(degenerate);
    CHECK(n.storage() == std::vector<float>{0.0f, 1.0f, 0.5f});
  }

  TEST_CASE("instance series") {
    const std::size_t h = 2, w = 4;
    CanvasLayer uniform;
    uniform.id = "u";
    uniform.maps = Tensor({2, h, w}, 1.0f);
    const std::vector<std::uint32_t> halves{5, 5, 6, 6, 5, 5, 6, 6};
    const std::vector<std::uint32_t> whole(h * w, 5);
    const std::vector<std::uint32_t> with_bg{0, 0, 6, 6, 0, 0, 6, 6};
    const auto s = instance_series({{0, &uniform, &halves}, {1, &uniform, &whole}, {2, &uniform, &with_bg}}, {0, 1});
    CHECK(s.instance_ids == std::vector<std::uint32_t>{5, 6});
    CHECK(s.percent[0][0][0] == 50.0);
    CHECK(s.percent[0][0][1] == 50.0);
    CHECK(s.percent[1][1][0] == 100.0);
    CHECK(std::isnan(s.percent[1][1][1]));
    CHECK(std::isnan(s.percent[0][2][0]));
    CHECK(s.percent[0][2][1] == 100.0);

    const auto l = make_layer(3, h, w, 14);
    const std::vector<std::uint32_t> mask{1, 2, 2, 0, 1, 3, 3, 3};
    const auto r = instance_series({{4, &l, &mask}}, {0, 1, 2});
    for (std::size_t j = 0; j < 3; ++j) {
      double total = 0;
      std::vector<double> m(3, 0);
      for (std::size_t p = 0; p < 8; ++p) {
        if (mask[p] == 0) continue;
        m[mask[p] - 1] += std::abs(l.map_ptr(j)[p]);
        total += std::abs(l.map_ptr(j)[p]);
      }
      for (std::size_t i = 0; i < 3; ++i) CHECK(r.percent[j][0][i] == doctest::Approx(100 * m[i] / total));
    }

    CanvasLayer zero = uniform;
    zero.maps.fill(0.0f);
    CHECK(std::isnan(instance_series({{0, &zero, &halves}}, {0}).percent[0][0][0]));
  }

  TEST_CASE("temporal fluctuation") {
    const auto a = make_layer(3, 4, 4, 21);
    const auto same = temporal_fluctuation(a, a);
    for (float v : same.values()) CHECK(v == 0.0f);
    CanvasLayer b = a, c = a;
    b.maps.fill(0.0f);
    c.maps.fill(0.0f);
    b.maps[5] = 1.0f;
    c.maps[6] = 1.0f;
    const auto f = temporal_fluctuation(c, b);
    for (std::size_t p = 0; p < 16; ++p) CHECK(f[p] == (p == 5 || p == 6 ? 1.0f : 0.0f));
    const auto r = make_layer(3, 4, 4, 22);
    const auto g = temporal_fluctuation(r, a);
    for (std::size_t p = 0; p < 16; ++p) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += std::abs(r.map_ptr(j)[p] - a.map_ptr(j)[p]);
      CHECK(g[p] == doctest::Approx(s));
    }
    CanvasLayer other = r;
    other.id = "other";
    CHECK_THROWS_AS(temporal_fluctuation(other, a), ArgumentError);
  }

  TEST_CASE("neuron embeddings and clustering") {
    const std::size_t h = 8, w = 8;
    const auto grid = gridcells(h, w, 2, 2);
    const auto l = make_layer(12, h, w, 30);
    const auto emb = neuron_embeddings(l, grid);
    REQUIRE(emb.size() == 12);
    for (std::size_t j = 0; j < 12; ++j) {
      double direct = 0;
      for (std::size_t p = 0; p < h * w; ++p) direct += std::abs(l.map_ptr(j)[p]);
      CHECK(emb[j].mass.size() == 4);
      CHECK(emb[j].total() == doctest::Approx(direct).epsilon(1e-12));
    }
    const auto nc = cluster_neurons(emb, 4, 0);
    CHECK(nc.labels.size() == 12);
    CHECK(nc.k <= 4);

    // Scaling a neuron does not change its cluster.
    auto scaled = emb;
    for (auto& e : scaled)
      for (auto& m : e.mass) m *= 3.0;
    CHECK(cluster_neurons(scaled, 4, 0).labels == nc.labels);

    CanvasLayer same;
    same.id = "s";
    same.maps = Tensor({5, h, w});
    for (std::size_t j = 0; j < 5; ++j) std::copy_n(l.map_ptr(0), h * w, same.maps.ptr() + j * h * w);
    for (std::size_t p = 0; p < h * w; ++p) same.maps[4 * h * w + p] = 0.0f;
    const auto sc = cluster_neurons(neuron_embeddings(same, grid), 2, 0);
    CHECK(sc.k == 1);
    CHECK(sc.labels == std::vector<int>{0, 0, 0, 0, -1});
    CHECK_THROWS_AS(cluster_neurons(neuron_embeddings(same, grid), 5, 0), ArgumentError);

    const auto xy = project_2d(neuron_embeddings(same, grid));
    CHECK(std::isnan(xy[4][0]));
    const auto pj = project_2d(emb);
    for (const auto& p : pj) CHECK(std::isfinite(p[0]));
  }
}
