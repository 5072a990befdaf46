#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "xinc/canvas.hpp"

namespace xinc {

// ---------------------------------------------------------------------------
// Pixel clusterings

enum class ClusterKind { instances, rgb, gabor, gridcells };
std::string to_string(ClusterKind kind);

struct PixelClustering {
  ClusterKind kind = ClusterKind::gridcells;
  std::size_t k = 0;  // populated clusters; labels lie in [0, k)
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;    // row-major
  std::vector<std::uint32_t> mask_ids;  // instances only: source id of each label
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  std::vector<std::size_t> areas() const;
};

struct KMeansResult {
  std::vector<std::uint32_t> labels;  // compacted to populated clusters
  std::vector<double> centroids;      // [k x dim]
  std::size_t k = 0;
  std::size_t iterations = 0;
  double inertia = 0.0;
  std::vector<std::string> warnings;
};

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iter` rounds or
/// once no centroid moves more than `tol`. Empty clusters keep their centroid;
/// the returned labels cover only populated clusters.
KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 100, double tol = 1e-4);

/// frame [3 x H x W]
PixelClustering cluster_rgb(const Tensor& frame, std::size_t k, std::uint64_t seed);

struct GaborFilter {
  double theta = 0.0;   // radians; 0 oscillates along x and picks up vertical stripes
  double lambda = 4.0;  // wavelength in pixels
  double sigma = 2.24;
  double gamma = 0.5;
  std::size_t size = 9;
  std::vector<double> real;  // [size x size], zero mean
  std::vector<double> imag;
};

struct GaborBank {
  std::vector<GaborFilter> filters;  // orientation-major: index = orientation * scales + scale

  static GaborBank standard();
  /// gray [H x W] -> quadrature magnitudes [H x W x filters], reflect-padded.
  std::vector<double> features(const std::vector<double>& gray, std::size_t height, std::size_t width) const;
};

inline constexpr std::array<double, 4> kGaborOrientationsDeg{0.0, 45.0, 90.0, 135.0};
inline constexpr std::array<double, 3> kGaborWavelengths{4.0, 8.0, 16.0};
inline constexpr double kGaborSigmaRatio = 0.56;
inline constexpr double kGaborAspect = 0.5;

std::vector<double> grayscale(const Tensor& frame);
PixelClustering cluster_gabor(const Tensor& frame, std::size_t k, std::uint64_t seed);
PixelClustering gridcells(std::size_t height, std::size_t width, std::size_t gy, std::size_t gx);
/// mask [H x W] of ids; each distinct id (0 included) becomes one cluster in ascending id order.
PixelClustering instance_clusters(const std::vector<std::uint32_t>& mask, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Expected versus actual contribution

inline constexpr double kDeadMass = 1e-9;

struct ClusterDeltas {
  bool dead = false;
  double cont_image = 0.0;
  std::vector<double> actual;
  std::vector<double> expected;
  std::vector<double> normalized;  // (expected - actual) / expected
};

/// `map` holds height*width values of one neuron; absolute values are used.
ClusterDeltas contribution_deltas(const float* map, const PixelClustering& clustering);

struct DeltaSpread {
  std::vector<double> per_neuron;  // population std of normalized deltas, NaN for dead neurons
  std::vector<double> sorted;      // live neurons only, ascending
  std::size_t dead = 0;

  double median() const;
};

DeltaSpread layer_delta_variance(const CanvasLayer& layer, const PixelClustering& clustering);

// ---------------------------------------------------------------------------
// Density

struct PixelShareCounts {
  std::vector<std::size_t> counts;  // per neuron, pixels where its share exceeds 1/n
  std::vector<std::size_t> sorted;  // ascending
  std::vector<double> curve;        // sorted counts resampled by linear interpolation
};

PixelShareCounts pixels_per_neuron(const CanvasLayer& layer, std::size_t length = 256);
std::vector<double> resample_linear(const std::vector<double>& values, std::size_t length);

/// Smallest |value| whose cumulative mass (sorted ascending, ties included)
/// exceeds x percent of the total; 0 when the layer is all zero.
double contribution_mass_percentile(const CanvasLayer& layer, double x);
/// Several thresholds from one sort.
std::vector<double> contribution_mass_percentiles(const CanvasLayer& layer, const std::vector<double>& xs);
double mass_percentile(std::vector<double> magnitudes, double x);

/// Percent of the layer's neurons with |contribution| > tau at each pixel, [H x W].
Tensor neurons_per_pixel(const CanvasLayer& layer, double tau);

// ---------------------------------------------------------------------------
// Intensity, instances, time

struct IntensityDelta {
  Tensor sum;        // sum_j |map_j|, [H x W]
  Tensor sum_norm;   // min-max normalised
  Tensor intensity_norm;
  Tensor delta;      // sum_norm - intensity_norm
  bool sum_degenerate = false;
  bool intensity_degenerate = false;
};

/// Min-max normalisation to [0,1]; a constant input maps to zeros and sets `degenerate`.
Tensor minmax_normalize(const Tensor& t, bool* degenerate = nullptr);
IntensityDelta intensity_delta(const CanvasLayer& layer, const Tensor& frame);

struct InstanceFrame {
  std::size_t frame_index = 0;
  const CanvasLayer* layer = nullptr;
  const std::vector<std::uint32_t>* mask = nullptr;  // [H x W]
};

struct InstanceSeries {
  std::vector<std::uint32_t> instance_ids;  // union over frames, id 0 excluded
  std::vector<std::size_t> frames;
  std::vector<std::size_t> neurons;
  /// percent[n][f][i]; NaN marks a frame where the neuron has no instance mass
  /// or the instance is absent.
  std::vector<std::vector<std::vector<double>>> percent;
};

InstanceSeries instance_series(const std::vector<InstanceFrame>& frames, const std::vector<std::size_t>& neurons);

/// sum_j |map_j^t - map_j^{t-1}|, [H x W]
Tensor temporal_fluctuation(const CanvasLayer& current, const CanvasLayer& previous);

// ---------------------------------------------------------------------------
// Neuron embeddings

struct NeuronEmbedding {
  std::string layer_id;
  std::size_t neuron_id = 0;
  std::vector<double> mass;  // absolute contribution per pixel cluster

  double total() const;
};

std::vector<NeuronEmbedding> neuron_embeddings(const CanvasLayer& layer, const PixelClustering& clustering);

struct NeuronClusters {
  std::vector<int> labels;  // -1 for dead neurons
  std::size_t k = 0;
  std::vector<std::string> warnings;
};

/// k-means over each live neuron's mass fractions.
NeuronClusters cluster_neurons(const std::vector<NeuronEmbedding>& embeddings, std::size_t k, std::uint64_t seed);

/// Coordinates on the top two principal axes of the mass fractions (power
/// iteration with deflation); dead neurons map to NaN.
std::vector<std::array<double, 2>> project_2d(const std::vector<NeuronEmbedding>& embeddings);

}  // namespace xinc
