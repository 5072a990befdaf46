#include "xinc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "xinc/errors.hpp"
#include "xinc/parallel.hpp"
#include "xinc/rng.hpp"

namespace xinc {

std::string to_string(ClusterKind kind) {
  switch (kind) {
    case ClusterKind::instances: return "instances";
    case ClusterKind::rgb: return "rgb";
    case ClusterKind::gabor: return "gabor";
    case ClusterKind::gridcells: return "gridcells";
  }
  return "unknown";
}

std::vector<std::size_t> PixelClustering::areas() const {
  std::vector<std::size_t> a(k, 0);
  for (auto l : labels) ++a[l];
  return a;
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

void assign(const std::vector<double>& points, std::size_t dim, const std::vector<double>& centroids,
            std::vector<std::uint32_t>& labels) {
  const std::size_t n = labels.size(), k = centroids.size() / dim;
  parallel_for(
      n,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const double* p = points.data() + i * dim;
          std::uint32_t best = 0;
          double best_d = squared_distance(p, centroids.data(), dim);
          for (std::size_t c = 1; c < k; ++c) {
            const double d = squared_distance(p, centroids.data() + c * dim, dim);
            if (d < best_d) {
              best_d = d;
              best = static_cast<std::uint32_t>(c);
            }
          }
          labels[i] = best;
        }
      },
      1024);
}

}  // namespace

KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter, double tol) {
  if (dim == 0 || points.size() % dim != 0) {
    throw DimensionError("kmeans: " + std::to_string(points.size()) + " values do not form " + std::to_string(dim) +
                         "-d points");
  }
  const std::size_t n = points.size() / dim;
  if (n == 0) throw ArgumentError("kmeans: no points");
  if (k < 1) throw ArgumentError("kmeans: k must be >= 1");

  KMeansResult r;
  SeededRng rng(seed);
  std::vector<double> centroids;
  auto add_center = [&](std::size_t i) {
    centroids.insert(centroids.end(), points.begin() + static_cast<std::ptrdiff_t>(i * dim),
                     points.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  };
  add_center(rng.below(n));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.data() + i * dim, centroids.data(), dim);
  while (centroids.size() / dim < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (total == 0.0) break;
    const double target = rng.uniform() * total;
    double cum = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] == 0.0) continue;
      cum += d2[i];
      pick = i;
      if (cum > target) break;
    }
    add_center(pick);
    const double* c = centroids.data() + centroids.size() - dim;
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points.data() + i * dim, c, dim));
  }
  const std::size_t kc = centroids.size() / dim;

  std::vector<std::uint32_t> labels(n);
  std::vector<double> sums(kc * dim);
  std::vector<std::size_t> counts(kc);
  for (r.iterations = 0; r.iterations < max_iter;) {
    assign(points, dim, centroids, labels);
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[labels[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[labels[i] * dim + d] += points[i * dim + d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < kc; ++c) {
      if (counts[c] == 0) continue;
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = sums[c * dim + d] / static_cast<double>(counts[c]);
        s += (v - centroids[c * dim + d]) * (v - centroids[c * dim + d]);
        centroids[c * dim + d] = v;
      }
      shift = std::max(shift, std::sqrt(s));
    }
    ++r.iterations;
    if (shift <= tol) break;
  }
  assign(points, dim, centroids, labels);

  std::vector<std::size_t> populated(kc, 0);
  for (auto l : labels) ++populated[l];
  std::vector<std::uint32_t> remap(kc, 0);
  for (std::size_t c = 0; c < kc; ++c) {
    if (populated[c] == 0) continue;
    remap[c] = static_cast<std::uint32_t>(r.k++);
    r.centroids.insert(r.centroids.end(), centroids.begin() + static_cast<std::ptrdiff_t>(c * dim),
                       centroids.begin() + static_cast<std::ptrdiff_t>((c + 1) * dim));
  }
  r.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.labels[i] = remap[labels[i]];
    r.inertia += squared_distance(points.data() + i * dim, r.centroids.data() + r.labels[i] * dim, dim);
  }
  if (r.k < k) {
    r.warnings.push_back("kmeans: requested " + std::to_string(k) + " clusters, only " + std::to_string(r.k) +
                         " populated");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Pixel clusterings

namespace {

void check_frame(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("expected a [3 x H x W] frame, got " + shape_string(frame.shape()));
  }
}

void check_k(std::size_t k) {
  if (k < 2) throw ArgumentError("cluster count must be >= 2, got " + std::to_string(k));
}

PixelClustering from_kmeans(ClusterKind kind, KMeansResult km, std::size_t h, std::size_t w, std::uint64_t seed) {
  PixelClustering c;
  c.kind = kind;
  c.k = km.k;
  c.height = h;
  c.width = w;
  c.labels = std::move(km.labels);
  c.seed = seed;
  c.warnings = std::move(km.warnings);
  return c;
}

std::size_t reflect(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  if (m == 1) return 0;
  const long period = 2 * (m - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - i);
}

}  // namespace

PixelClustering cluster_rgb(const Tensor& frame, std::size_t k, std::uint64_t seed) {
  check_frame(frame);
  check_k(k);
  const std::size_t h = frame.dim(1), w = frame.dim(2), n = h * w;
  std::vector<double> points(n * 3);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) points[p * 3 + c] = frame[c * n + p];
  return from_kmeans(ClusterKind::rgb, kmeans(points, 3, k, seed), h, w, seed);
}

GaborBank GaborBank::standard() {
  GaborBank bank;
  for (double deg : kGaborOrientationsDeg) {
    for (double lambda : kGaborWavelengths) {
      GaborFilter f;
      f.theta = deg * std::numbers::pi / 180.0;
      f.lambda = lambda;
      f.sigma = kGaborSigmaRatio * lambda;
      f.gamma = kGaborAspect;
      f.size = static_cast<std::size_t>(std::lround(4.0 * f.sigma));
      if (f.size % 2 == 0) ++f.size;
      const long half = static_cast<long>(f.size / 2);
      const std::size_t cells = f.size * f.size;
      std::vector<double> env(cells);
      double env_sum = 0.0;
      f.real.resize(cells);
      f.imag.resize(cells);
      std::vector<double> phase(cells);
      for (long y = -half; y <= half; ++y)
        for (long x = -half; x <= half; ++x) {
          const double xr = x * std::cos(f.theta) + y * std::sin(f.theta);
          const double yr = -x * std::sin(f.theta) + y * std::cos(f.theta);
          const std::size_t i = static_cast<std::size_t>((y + half) * static_cast<long>(f.size) + x + half);
          env[i] = std::exp(-(xr * xr + f.gamma * f.gamma * yr * yr) / (2.0 * f.sigma * f.sigma));
          phase[i] = 2.0 * std::numbers::pi * xr / f.lambda;
          env_sum += env[i];
        }
      double mean_re = 0.0, mean_im = 0.0;
      for (std::size_t i = 0; i < cells; ++i) {
        f.real[i] = env[i] / env_sum * std::cos(phase[i]);
        f.imag[i] = env[i] / env_sum * std::sin(phase[i]);
        mean_re += f.real[i];
        mean_im += f.imag[i];
      }
      mean_re /= static_cast<double>(cells);
      mean_im /= static_cast<double>(cells);
      for (std::size_t i = 0; i < cells; ++i) {
        f.real[i] -= mean_re;
        f.imag[i] -= mean_im;
      }
      bank.filters.push_back(std::move(f));
    }
  }
  return bank;
}

std::vector<double> GaborBank::features(const std::vector<double>& gray, std::size_t height,
                                        std::size_t width) const {
  if (gray.size() != height * width) throw DimensionError("gabor: image size does not match dimensions");
  const std::size_t nf = filters.size();
  std::vector<double> out(height * width * nf);
  parallel_for(height, [&](std::size_t begin, std::size_t end) {
    std::vector<double> window;
    for (std::size_t y = begin; y < end; ++y)
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t f = 0; f < nf; ++f) {
          const GaborFilter& g = filters[f];
          const long half = static_cast<long>(g.size / 2);
          double re = 0.0, im = 0.0;
          std::size_t i = 0;
          for (long dy = -half; dy <= half; ++dy) {
            const double* row = gray.data() + reflect(static_cast<long>(y) + dy, height) * width;
            for (long dx = -half; dx <= half; ++dx, ++i) {
              const double v = row[reflect(static_cast<long>(x) + dx, width)];
              re += g.real[i] * v;
              im += g.imag[i] * v;
            }
          }
          out[(y * width + x) * nf + f] = std::sqrt(re * re + im * im);
        }
  });
  return out;
}

std::vector<double> grayscale(const Tensor& frame) {
  check_frame(frame);
  const std::size_t n = frame.dim(1) * frame.dim(2);
  std::vector<double> g(n);
  for (std::size_t p = 0; p < n; ++p) {
    g[p] = 0.299 * frame[p] + 0.587 * frame[n + p] + 0.114 * frame[2 * n + p];
  }
  return g;
}

PixelClustering cluster_gabor(const Tensor& frame, std::size_t k, std::uint64_t seed) {
  check_frame(frame);
  check_k(k);
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  const GaborBank bank = GaborBank::standard();
  return from_kmeans(ClusterKind::gabor, kmeans(bank.features(grayscale(frame), h, w), bank.filters.size(), k, seed),
                     h, w, seed);
}

PixelClustering gridcells(std::size_t height, std::size_t width, std::size_t gy, std::size_t gx) {
  if (gy == 0 || gx == 0 || height % gy != 0 || width % gx != 0) {
    throw ArgumentError("gridcells: " + std::to_string(gy) + "x" + std::to_string(gx) + " does not divide " +
                        std::to_string(height) + "x" + std::to_string(width));
  }
  PixelClustering c;
  c.kind = ClusterKind::gridcells;
  c.k = gy * gx;
  c.height = height;
  c.width = width;
  c.labels.resize(height * width);
  const std::size_t ch = height / gy, cw = width / gx;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) c.labels[y * width + x] = static_cast<std::uint32_t>((y / ch) * gx + x / cw);
  return c;
}

PixelClustering instance_clusters(const std::vector<std::uint32_t>& mask, std::size_t height, std::size_t width) {
  if (mask.empty()) throw ArgumentError("instance mask is empty");
  if (mask.size() != height * width) throw DimensionError("instance mask size does not match dimensions");
  PixelClustering c;
  c.kind = ClusterKind::instances;
  c.height = height;
  c.width = width;
  c.mask_ids = mask;
  std::sort(c.mask_ids.begin(), c.mask_ids.end());
  c.mask_ids.erase(std::unique(c.mask_ids.begin(), c.mask_ids.end()), c.mask_ids.end());
  c.k = c.mask_ids.size();
  c.labels.resize(mask.size());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    c.labels[p] = static_cast<std::uint32_t>(std::lower_bound(c.mask_ids.begin(), c.mask_ids.end(), mask[p]) -
                                             c.mask_ids.begin());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Deltas

namespace {

void check_layer_matches(const CanvasLayer& layer, std::size_t h, std::size_t w, const char* what) {
  if (layer.maps.rank() != 3 || layer.height() != h || layer.width() != w) {
    throw DimensionError(std::string(what) + ": layer " + layer.id + " " + shape_string(layer.maps.shape()) +
                         " does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
}

double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

ClusterDeltas contribution_deltas(const float* map, const PixelClustering& clustering) {
  ClusterDeltas d;
  const std::size_t n = clustering.labels.size();
  d.actual.assign(clustering.k, 0.0);
  for (std::size_t p = 0; p < n; ++p) d.actual[clustering.labels[p]] += std::abs(static_cast<double>(map[p]));
  for (double a : d.actual) d.cont_image += a;
  const auto areas = clustering.areas();
  d.expected.resize(clustering.k);
  for (std::size_t c = 0; c < clustering.k; ++c) {
    d.expected[c] = static_cast<double>(areas[c]) / static_cast<double>(n) * d.cont_image;
  }
  if (d.cont_image < kDeadMass) {
    d.dead = true;
    return d;
  }
  d.normalized.resize(clustering.k);
  for (std::size_t c = 0; c < clustering.k; ++c) d.normalized[c] = (d.expected[c] - d.actual[c]) / d.expected[c];
  return d;
}

double DeltaSpread::median() const {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t m = sorted.size() / 2;
  return sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
}

DeltaSpread layer_delta_variance(const CanvasLayer& layer, const PixelClustering& clustering) {
  check_layer_matches(layer, clustering.height, clustering.width, "delta variance");
  if (clustering.k < 2) throw ArgumentError("delta variance needs at least 2 clusters, got " + std::to_string(clustering.k));
  DeltaSpread s;
  s.per_neuron.assign(layer.count(), std::numeric_limits<double>::quiet_NaN());
  parallel_for(layer.count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const ClusterDeltas d = contribution_deltas(layer.map_ptr(j), clustering);
      if (!d.dead) s.per_neuron[j] = population_std(d.normalized);
    }
  });
  for (double v : s.per_neuron) {
    if (std::isnan(v)) {
      ++s.dead;
    } else {
      s.sorted.push_back(v);
    }
  }
  std::sort(s.sorted.begin(), s.sorted.end());
  return s;
}

// ---------------------------------------------------------------------------
// Density

std::vector<double> resample_linear(const std::vector<double>& values, std::size_t length) {
  if (values.empty()) throw ArgumentError("resample: no values");
  if (length == 0) return {};
  std::vector<double> out(length);
  const std::size_t n = values.size();
  for (std::size_t i = 0; i < length; ++i) {
    if (n == 1 || length == 1) {
      out[i] = values[0];
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(length - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), n - 2);
    const double frac = pos - static_cast<double>(lo);
    out[i] = values[lo] + frac * (values[lo + 1] - values[lo]);
  }
  return out;
}

PixelShareCounts pixels_per_neuron(const CanvasLayer& layer, std::size_t length) {
  const std::size_t n = layer.count();
  if (n == 0) throw ArgumentError("pixels_per_neuron: layer " + layer.id + " has no neurons");
  const std::size_t pixels = layer.height() * layer.width();
  const double threshold = 1.0 / static_cast<double>(n);
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(thread_count() * 4, pixels));
  std::vector<std::vector<std::size_t>> partial(chunks, std::vector<std::size_t>(n, 0));
  parallel_for(chunks, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t chunk = cb; chunk < ce; ++chunk) {
      const std::size_t p0 = pixels * chunk / chunks, p1 = pixels * (chunk + 1) / chunks;
      for (std::size_t p = p0; p < p1; ++p) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += std::abs(static_cast<double>(layer.maps[j * pixels + p]));
        if (total == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
          if (std::abs(static_cast<double>(layer.maps[j * pixels + p])) / total > threshold) ++partial[chunk][j];
        }
      }
    }
  });
  PixelShareCounts r;
  r.counts.assign(n, 0);
  for (const auto& part : partial)
    for (std::size_t j = 0; j < n; ++j) r.counts[j] += part[j];
  r.sorted = r.counts;
  std::sort(r.sorted.begin(), r.sorted.end());
  r.curve = resample_linear(std::vector<double>(r.sorted.begin(), r.sorted.end()), length);
  return r;
}

namespace {

void check_percentile(double x) {
  if (!(x > 0.0 && x < 100.0)) throw ArgumentError("percentile must lie in (0, 100), got " + std::to_string(x));
}

/// `sorted` holds non-negative values in ascending order.
template <typename V>
std::vector<double> sorted_mass_percentiles(const std::vector<V>& sorted, const std::vector<double>& xs) {
  double total = 0.0;
  for (V v : sorted) total += v;
  std::vector<double> out(xs.size(), 0.0);
  if (total == 0.0) return out;
  for (std::size_t q = 0; q < xs.size(); ++q) {
    const double target = xs[q] / 100.0 * total;
    double cum = 0.0;
    out[q] = static_cast<double>(sorted.back());
    for (std::size_t i = 0; i < sorted.size();) {
      const V v = sorted[i];
      while (i < sorted.size() && sorted[i] == v) cum += sorted[i++];
      if (cum > target) {
        out[q] = static_cast<double>(v);
        break;
      }
    }
  }
  return out;
}

}  // namespace

double mass_percentile(std::vector<double> magnitudes, double x) {
  check_percentile(x);
  if (magnitudes.empty()) return 0.0;
  for (auto& v : magnitudes) v = std::abs(v);
  std::sort(magnitudes.begin(), magnitudes.end());
  return sorted_mass_percentiles(magnitudes, {x})[0];
}

std::vector<double> contribution_mass_percentiles(const CanvasLayer& layer, const std::vector<double>& xs) {
  for (double x : xs) check_percentile(x);
  if (layer.maps.empty()) return std::vector<double>(xs.size(), 0.0);
  std::vector<float> mags(layer.maps.values().begin(), layer.maps.values().end());
  for (auto& v : mags) v = std::abs(v);
  std::sort(mags.begin(), mags.end());
  return sorted_mass_percentiles(mags, xs);
}

double contribution_mass_percentile(const CanvasLayer& layer, double x) {
  return contribution_mass_percentiles(layer, {x})[0];
}

Tensor neurons_per_pixel(const CanvasLayer& layer, double tau) {
  const std::size_t n = layer.count(), h = layer.height(), w = layer.width(), pixels = h * w;
  if (n == 0) throw ArgumentError("neurons_per_pixel: layer " + layer.id + " has no neurons");
  Tensor density({h, w});
  parallel_for(pixels, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      std::size_t count = 0;
      for (std::size_t j = 0; j < n; ++j) count += std::abs(static_cast<double>(layer.maps[j * pixels + p])) > tau;
      density[p] = static_cast<float>(static_cast<double>(count) / static_cast<double>(n) * 100.0);
    }
  }, 256);
  return density;
}

// ---------------------------------------------------------------------------
// Intensity, instances, time

Tensor minmax_normalize(const Tensor& t, bool* degenerate) {
  if (t.empty()) throw ArgumentError("minmax_normalize: empty tensor");
  const auto [lo_it, hi_it] = std::minmax_element(t.values().begin(), t.values().end());
  const double lo = *lo_it, hi = *hi_it;
  Tensor out(t.shape());
  if (degenerate) *degenerate = hi == lo;
  if (hi == lo) return out;
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>((t[i] - lo) / (hi - lo));
  return out;
}

IntensityDelta intensity_delta(const CanvasLayer& layer, const Tensor& frame) {
  check_frame(frame);
  const std::size_t h = frame.dim(1), w = frame.dim(2), pixels = h * w;
  check_layer_matches(layer, h, w, "intensity delta");
  IntensityDelta r;
  r.sum = Tensor({h, w});
  Tensor intensity({h, w});
  for (std::size_t p = 0; p < pixels; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < layer.count(); ++j) s += std::abs(static_cast<double>(layer.maps[j * pixels + p]));
    r.sum[p] = static_cast<float>(s);
    intensity[p] = frame[p] + frame[pixels + p] + frame[2 * pixels + p];
  }
  r.sum_norm = minmax_normalize(r.sum, &r.sum_degenerate);
  r.intensity_norm = minmax_normalize(intensity, &r.intensity_degenerate);
  r.delta = Tensor({h, w});
  for (std::size_t p = 0; p < pixels; ++p) r.delta[p] = r.sum_norm[p] - r.intensity_norm[p];
  return r;
}

InstanceSeries instance_series(const std::vector<InstanceFrame>& frames, const std::vector<std::size_t>& neurons) {
  InstanceSeries s;
  s.neurons = neurons;
  for (const auto& f : frames) {
    if (!f.layer || !f.mask) throw ArgumentError("instance series: frame " + std::to_string(f.frame_index) + " lacks a canvas or mask");
    const std::size_t pixels = f.layer->height() * f.layer->width();
    if (f.mask->size() != pixels) {
      throw DimensionError("instance series: mask for frame " + std::to_string(f.frame_index) + " does not match canvas");
    }
    for (std::size_t j : neurons) {
      if (j >= f.layer->count()) throw ArgumentError("instance series: no neuron " + std::to_string(j) + " in " + f.layer->id);
    }
    for (auto id : *f.mask)
      if (id != 0) s.instance_ids.push_back(id);
    std::sort(s.instance_ids.begin(), s.instance_ids.end());
    s.instance_ids.erase(std::unique(s.instance_ids.begin(), s.instance_ids.end()), s.instance_ids.end());
    s.frames.push_back(f.frame_index);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::size_t ni = s.instance_ids.size();
  s.percent.assign(neurons.size(), std::vector<std::vector<double>>(frames.size(), std::vector<double>(ni, nan)));
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    const auto& f = frames[fi];
    const auto& mask = *f.mask;
    const std::size_t pixels = mask.size();
    std::vector<std::size_t> slot(pixels, ni);
    std::vector<bool> present(ni, false);
    for (std::size_t p = 0; p < pixels; ++p) {
      if (mask[p] == 0) continue;
      slot[p] = static_cast<std::size_t>(std::lower_bound(s.instance_ids.begin(), s.instance_ids.end(), mask[p]) -
                                         s.instance_ids.begin());
      present[slot[p]] = true;
    }
    for (std::size_t nj = 0; nj < neurons.size(); ++nj) {
      const float* m = f.layer->map_ptr(neurons[nj]);
      std::vector<double> mass(ni, 0.0);
      for (std::size_t p = 0; p < pixels; ++p)
        if (slot[p] < ni) mass[slot[p]] += std::abs(static_cast<double>(m[p]));
      double total = 0.0;
      for (double v : mass) total += v;
      if (total == 0.0) continue;
      for (std::size_t i = 0; i < ni; ++i)
        if (present[i]) s.percent[nj][fi][i] = mass[i] / total * 100.0;
    }
  }
  return s;
}

Tensor temporal_fluctuation(const CanvasLayer& current, const CanvasLayer& previous) {
  if (current.id != previous.id) {
    throw ArgumentError("temporal fluctuation compares layer " + current.id + " with " + previous.id);
  }
  if (current.maps.shape() != previous.maps.shape()) {
    throw DimensionError("temporal fluctuation: " + shape_string(current.maps.shape()) + " vs " +
                         shape_string(previous.maps.shape()));
  }
  const std::size_t h = current.height(), w = current.width(), pixels = h * w;
  Tensor f({h, w});
  parallel_for(pixels, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < current.count(); ++j) {
        s += std::abs(static_cast<double>(current.maps[j * pixels + p]) - static_cast<double>(previous.maps[j * pixels + p]));
      }
      f[p] = static_cast<float>(s);
    }
  }, 256);
  return f;
}

// ---------------------------------------------------------------------------
// Neuron embeddings

double NeuronEmbedding::total() const {
  double t = 0.0;
  for (double v : mass) t += v;
  return t;
}

std::vector<NeuronEmbedding> neuron_embeddings(const CanvasLayer& layer, const PixelClustering& clustering) {
  check_layer_matches(layer, clustering.height, clustering.width, "neuron embeddings");
  std::vector<NeuronEmbedding> out(layer.count());
  parallel_for(layer.count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      out[j].layer_id = layer.id;
      out[j].neuron_id = j;
      out[j].mass = contribution_deltas(layer.map_ptr(j), clustering).actual;
    }
  });
  return out;
}

namespace {

/// Mass fractions of live neurons, row-major, plus their indices.
std::pair<std::vector<double>, std::vector<std::size_t>> live_fractions(const std::vector<NeuronEmbedding>& e) {
  std::vector<double> points;
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double t = e[i].total();
    if (t < kDeadMass) continue;
    live.push_back(i);
    for (double v : e[i].mass) points.push_back(v / t);
  }
  return {std::move(points), std::move(live)};
}

}  // namespace

NeuronClusters cluster_neurons(const std::vector<NeuronEmbedding>& embeddings, std::size_t k, std::uint64_t seed) {
  if (embeddings.empty()) throw ArgumentError("cluster_neurons: no embeddings");
  const std::string& layer = embeddings[0].layer_id;
  const std::size_t dim = embeddings[0].mass.size();
  for (const auto& e : embeddings) {
    if (e.layer_id != layer) throw ArgumentError("cluster_neurons: embeddings mix layers " + layer + " and " + e.layer_id);
    if (e.mass.size() != dim) throw DimensionError("cluster_neurons: embeddings differ in length");
  }
  auto [points, live] = live_fractions(embeddings);
  if (live.size() < k) {
    throw ArgumentError("cluster_neurons: " + std::to_string(live.size()) + " live neurons, fewer than k = " +
                        std::to_string(k));
  }
  KMeansResult km = kmeans(points, dim, k, seed);
  NeuronClusters r;
  r.labels.assign(embeddings.size(), -1);
  for (std::size_t i = 0; i < live.size(); ++i) r.labels[live[i]] = static_cast<int>(km.labels[i]);
  r.k = km.k;
  r.warnings = std::move(km.warnings);
  return r;
}

std::vector<std::array<double, 2>> project_2d(const std::vector<NeuronEmbedding>& embeddings) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::array<double, 2>> out(embeddings.size(), {nan, nan});
  if (embeddings.empty()) return out;
  const std::size_t dim = embeddings[0].mass.size();
  auto [points, live] = live_fractions(embeddings);
  const std::size_t n = live.size();
  if (n == 0 || dim == 0) return out;
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += points[i * dim + d];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) points[i * dim + d] -= mean[d];
  std::vector<double> cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b) cov[a * dim + b] += points[i * dim + a] * points[i * dim + b];

  std::array<std::vector<double>, 2> axes;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    std::vector<double> v(dim);
    for (std::size_t d = 0; d < dim; ++d) v[d] = 1.0 + static_cast<double>(d);
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      std::vector<double> next(dim, 0.0);
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) next[a] += cov[a * dim + b] * v[b];
      double norm = 0.0;
      for (double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        break;
      }
      double change = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        change = std::max(change, std::abs(next[d] / norm - v[d]));
        v[d] = next[d] / norm;
      }
      lambda = norm;
      if (change < 1e-12) break;
    }
    const auto big = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*big < 0)
      for (auto& x : v) x = -x;
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b) cov[a * dim + b] -= lambda * v[a] * v[b];
    axes[axis] = std::move(v);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += points[i * dim + d] * axes[axis][d];
      out[live[i]][axis] = s;
    }
  }
  return out;
}

}  // namespace xinc
