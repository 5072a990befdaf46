#include "xinc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "xinc/rng.hpp"

namespace xinc {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("warmup fraction must lie in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
  if (eps <= 0.0) throw ConfigError("Adam epsilon must be positive");
}

TrainConfig ffn_train_defaults() {
  TrainConfig c;
  c.lr = 2e-2;
  return c;
}

TrainConfig nerv_train_defaults() {
  TrainConfig c;
  c.lr = 2e-3;
  return c;
}

double scheduled_lr(const TrainConfig& cfg, double progress) {
  const double epochs = static_cast<double>(cfg.epochs);
  const double warmup = cfg.warmup_fraction * epochs;
  if (progress < warmup) return cfg.lr * progress / warmup;
  if (epochs <= warmup) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (progress - warmup) / (epochs - warmup)));
}

namespace {

template <typename T>
class Adam {
 public:
  Adam(const TrainConfig& cfg, const std::vector<NamedParam<T>>& params) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor->size(), T(0));
      v_.emplace_back(p.tensor->size(), T(0));
    }
  }

  void step(std::vector<NamedParam<T>>& params, const std::vector<NamedParam<T>>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T step_size = T(lr / c1);
    const T inv_sqrt_c2 = T(1.0 / std::sqrt(c2));
    const T eps = T(cfg_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      T* p = params[k].tensor->ptr();
      const T* g = grads[k].tensor->ptr();
      T* m = m_[k].data();
      T* v = v_[k].data();
      const std::size_t n = params[k].tensor->size();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

template <typename T>
double grad_norm(const std::vector<NamedParam<T>>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (T v : g.tensor->values()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <typename T>
[[noreturn]] void abort_non_finite(std::size_t epoch, double lr, double loss, const std::vector<NamedParam<T>>& grads) {
  std::ostringstream msg;
  msg << "non-finite loss " << loss << " at epoch " << epoch << " (lr " << lr << ", grad norm " << grad_norm(grads)
      << ")";
  throw NumericError(msg.str());
}

/// Mean squared error and its gradient w.r.t. the prediction.
template <typename T>
double mse_and_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target, BasicTensor<T>* grad) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("loss: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  }
  const std::size_t n = pred.size();
  double sum = 0.0;
  if (grad) *grad = BasicTensor<T>(pred.shape());
  const T scale = T(2.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred[i] - target[i];
    sum += static_cast<double>(d) * static_cast<double>(d);
    if (grad) (*grad)[i] = scale * d;
  }
  return sum / static_cast<double>(n);
}

template <typename T>
void multiply_inplace(BasicTensor<T>& a, const BasicTensor<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
}

Tensor clamp01(Tensor t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> frame_to_rows(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("expected a [3 x H x W] frame, got " + shape_string(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  BasicTensor<T> rows({h * w, 3});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < h * w; ++p) rows[p * 3 + c] = static_cast<T>(frame[c * h * w + p]);
  return rows;
}

Tensor rows_to_frame(const Tensor& rows, std::size_t height, std::size_t width) {
  if (rows.rank() != 2 || rows.dim(1) != 3 || rows.dim(0) != height * width) {
    throw DimensionError("rows " + shape_string(rows.shape()) + " do not form a " + std::to_string(height) + "x" +
                         std::to_string(width) + " frame");
  }
  Tensor frame({3, height, width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < height * width; ++p) frame[c * height * width + p] = rows[p * 3 + c];
  return frame;
}

double psnr(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("psnr: " + shape_string(prediction.shape()) + " vs " + shape_string(target.shape()));
  }
  if (prediction.empty()) throw ArgumentError("psnr: empty frames");
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(prediction.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr_capped(double value) { return std::min(value, 100.0); }

template <typename T>
double ffn_loss_and_grad(const FfnModel<T>& model, const BasicTensor<T>& encoded, const BasicTensor<T>& target,
                         FfnModel<T>* grads) {
  const std::size_t L = model.layers.size();
  std::vector<BasicTensor<T>> pre(L), post(L);
  const BasicTensor<T>* v = &encoded;
  for (std::size_t l = 0; l < L; ++l) {
    pre[l] = matmul(*v, model.layers[l].weight);
    add_row_bias(pre[l], model.layers[l].bias);
    post[l] = activation(pre[l], l + 1 == L ? model.output_activation : model.hidden_activation);
    v = &post[l];
  }
  BasicTensor<T> delta;
  const double loss = mse_and_grad(post[L - 1], target, grads ? &delta : nullptr);
  if (!grads) return loss;

  for (std::size_t l = L; l-- > 0;) {
    multiply_inplace(delta, activation_grad(pre[l], l + 1 == L ? model.output_activation : model.hidden_activation));
    const BasicTensor<T>& input = l == 0 ? encoded : post[l - 1];
    grads->layers[l].weight = matmul_tn(input, delta);
    grads->layers[l].bias = column_sums(delta);
    if (l > 0) delta = matmul(delta, transpose(model.layers[l].weight));
  }
  return loss;
}

template <typename T>
double nerv_loss_and_grad(const NervModel<T>& model, double t_norm, const BasicTensor<T>& target,
                          NervModel<T>* grads) {
  NervTrace<T> tr;
  const BasicTensor<T> out = forward_nerv_at(model, t_norm, &tr);
  BasicTensor<T> delta;
  const double loss = mse_and_grad(out, target, grads ? &delta : nullptr);
  if (!grads) return loss;

  const Activation act = model.config.block_activation;
  multiply_inplace(delta, activation_grad(tr.head_pre, model.config.head_activation));
  ConvGrads<T> g = conv2d_backward(tr.head_input, model.head.weight, delta, true);
  grads->head.weight = std::move(g.kernels);
  grads->head.bias = std::move(g.bias);
  BasicTensor<T> dx = std::move(g.input);

  for (std::size_t i = model.blocks.size(); i-- > 0;) {
    multiply_inplace(dx, activation_grad(tr.block_pre[i], act));
    const BasicTensor<T> dconv = pixel_unshuffle(dx, model.config.strides[i]);
    ConvGrads<T> gb = conv2d_backward(tr.block_input[i], model.blocks[i].weight, dconv, true);
    grads->blocks[i].weight = std::move(gb.kernels);
    grads->blocks[i].bias = std::move(gb.bias);
    dx = std::move(gb.input);
  }

  dx.reshape({1, dx.size()});
  multiply_inplace(dx, activation_grad(tr.stem_pre, act));
  grads->stem_out.weight = matmul_tn(tr.stem_hidden_post, dx);
  grads->stem_out.bias = column_sums(dx);
  BasicTensor<T> dh = matmul(dx, transpose(model.stem_out.weight));
  multiply_inplace(dh, activation_grad(tr.stem_hidden_pre, act));
  grads->stem_hidden.weight = matmul_tn(tr.embedding, dh);
  grads->stem_hidden.bias = column_sums(dh);
  return loss;
}

template <typename T>
TrainResult<FfnModel<T>> train(FfnModel<T> model, std::span<const Tensor> frames, const TrainConfig& cfg,
                               const ProgressFn& progress) {
  cfg.validate();
  if (frames.size() != 1) throw ArgumentError("FFN training takes exactly one frame, got " + std::to_string(frames.size()));
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor& frame = frames[0];
  const std::size_t h = frame.dim(1), w = frame.dim(2), n = h * w;
  const BasicTensor<T> encoded = model.encoder.encode(pixel_grid<T>(h, w));
  const BasicTensor<T> target = frame_to_rows<T>(frame);

  const std::size_t batch = cfg.pixel_batch == 0 || cfg.pixel_batch >= n ? n : cfg.pixel_batch;
  const std::size_t steps = (n + batch - 1) / batch;
  FfnModel<T> grads = zeros_like(model);
  auto params = parameters(model);
  auto grad_params = parameters(grads);
  Adam<T> adam(cfg, params);
  SeededRng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  FitReport report;
  report.seed = cfg.seed;
  const std::size_t enc_dim = encoded.dim(1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const double lr = scheduled_lr(cfg, static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps));
      if (s == 0) report.epoch_lr.push_back(lr);
      double loss;
      if (batch == n) {
        loss = ffn_loss_and_grad(model, encoded, target, &grads);
      } else {
        const std::size_t begin = s * batch, count = std::min(batch, n - begin);
        BasicTensor<T> enc_b({count, enc_dim}), tgt_b({count, 3});
        for (std::size_t i = 0; i < count; ++i) {
          const std::size_t p = order[begin + i];
          std::copy_n(encoded.ptr() + p * enc_dim, enc_dim, enc_b.ptr() + i * enc_dim);
          std::copy_n(target.ptr() + p * 3, 3, tgt_b.ptr() + i * 3);
        }
        loss = ffn_loss_and_grad(model, enc_b, tgt_b, &grads);
      }
      if (!std::isfinite(loss)) abort_non_finite(epoch + 1, lr, loss, grad_params);
      adam.step(params, grad_params, lr);
      epoch_loss += loss;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(steps));
    if (progress) progress(epoch + 1, report.epoch_loss.back(), report.epoch_lr.back());
  }

  const BasicTensor<T> pred = forward_ffn(model, pixel_grid<T>(h, w));
  report.final_psnr.push_back(psnr(clamp01(rows_to_frame(pred.template cast<float>(), h, w)), frame));
  report.model_hash = model_hash(model);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

template <typename T>
TrainResult<NervModel<T>> train(NervModel<T> model, std::span<const Tensor> frames, const TrainConfig& cfg,
                                const ProgressFn& progress) {
  cfg.validate();
  if (frames.empty()) throw ArgumentError("NeRV training needs at least one frame");
  const auto t0 = std::chrono::steady_clock::now();
  const Shape expected{3, model.config.height, model.config.width};
  std::vector<BasicTensor<T>> targets;
  for (const auto& f : frames) {
    if (f.shape() != expected) {
      throw DimensionError("frame " + shape_string(f.shape()) + " does not match model output " + shape_string(expected));
    }
    targets.push_back(f.template cast<T>());
  }
  const std::size_t count = frames.size();
  NervModel<T> grads = zeros_like(model);
  auto params = parameters(model);
  auto grad_params = parameters(grads);
  Adam<T> adam(cfg, params);

  FitReport report;
  report.seed = cfg.seed;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
      const double lr = scheduled_lr(cfg, static_cast<double>(epoch) + static_cast<double>(t) / static_cast<double>(count));
      if (t == 0) report.epoch_lr.push_back(lr);
      const double loss = nerv_loss_and_grad(model, nerv_time(t, count), targets[t], &grads);
      if (!std::isfinite(loss)) abort_non_finite(epoch + 1, lr, loss, grad_params);
      adam.step(params, grad_params, lr);
      epoch_loss += loss;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(count));
    if (progress) progress(epoch + 1, report.epoch_loss.back(), report.epoch_lr.back());
  }
  for (std::size_t t = 0; t < count; ++t) {
    const Tensor out = forward_nerv(model, t, count).template cast<float>();
    report.final_psnr.push_back(psnr(clamp01(out), frames[t]));
  }
  report.model_hash = model_hash(model);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Gradient check

template <typename T>
BasicTensor<T> forward_block(const NervBlockSlice<T>& slice) {
  return activation(pixel_shuffle(conv2d(slice.input, slice.conv.weight, slice.conv.bias), slice.stride),
                    slice.activation);
}

template <typename T>
double block_loss_and_grad(const NervBlockSlice<T>& slice, const BasicTensor<T>& target, ConvLayer<T>* grads) {
  const BasicTensor<T> pre = pixel_shuffle(conv2d(slice.input, slice.conv.weight, slice.conv.bias), slice.stride);
  BasicTensor<T> delta;
  const double loss = mse_and_grad(activation(pre, slice.activation), target, grads ? &delta : nullptr);
  if (!grads) return loss;
  multiply_inplace(delta, activation_grad(pre, slice.activation));
  ConvGrads<T> g = conv2d_backward(slice.input, slice.conv.weight, pixel_unshuffle(delta, slice.stride), false);
  grads->weight = std::move(g.kernels);
  grads->bias = std::move(g.bias);
  return loss;
}

FfnConfig micro_ffn_config() {
  FfnConfig c;
  c.frequencies = 4;
  c.hidden = {12, 12};
  c.outputs = 3;
  c.sigma = 1.0;
  return c;
}

NervConfig micro_nerv_config() {
  NervConfig c;
  c.height = 8;
  c.width = 8;
  c.strides = {2};
  c.pe_length = 4;
  c.stem_hidden = 8;
  c.widths = {3, 2};
  return c;
}

template <typename T>
FfnModel<T> micro_ffn(std::uint64_t seed) {
  FfnModel<T> m = build_ffn<T>(seed, micro_ffn_config());
  m.hidden_activation = Activation::identity;
  return m;
}

template <typename T>
NervBlockSlice<T> micro_nerv_block(std::uint64_t seed) {
  SeededRng rng(seed);
  const std::size_t cin = 4, cout = 3, r = 2, k = 3, side = 6;
  NervBlockSlice<T> s;
  s.stride = r;
  s.conv.weight = BasicTensor<T>({cout * r * r, cin, k, k});
  s.conv.bias = BasicTensor<T>({cout * r * r});
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  for (auto& v : s.conv.weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& v : s.conv.bias.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  s.input = BasicTensor<T>({cin, side, side});
  for (auto& v : s.input.values()) v = static_cast<T>(rng.normal());
  return s;
}

namespace {

// Naive extended-precision forward passes that serve as the finite-difference
// oracle. They share no code with the production kernels.
namespace reference {

using Real = long double;
using Vec = std::vector<Real>;

Real act(Real x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0 ? x : 0;
    case Activation::gelu: {
      const Real c = std::sqrt(Real(2) / std::numbers::pi_v<Real>);
      return Real(0.5) * x * (1 + std::tanh(c * (x + Real(0.044715) * x * x * x)));
    }
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return 1 / (1 + std::exp(-x));
  }
  return x;
}

template <typename T>
Vec widen(const BasicTensor<T>& t) {
  return Vec(t.values().begin(), t.values().end());
}

/// x [n x in] -> act(x W + b) [n x out]
template <typename T>
Vec affine(const Vec& x, std::size_t n, const AffineLayer<T>& layer, Activation a) {
  const std::size_t in = layer.weight.dim(0), out = layer.weight.dim(1);
  Vec y(n * out);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      Real acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * Real(layer.weight[i * out + o]);
      y[r * out + o] = act(acc, a);
    }
  return y;
}

template <typename T>
Vec conv(const Vec& x, std::size_t h, std::size_t w, const ConvLayer<T>& layer) {
  const std::size_t cout = layer.weight.dim(0), cin = layer.weight.dim(1), k = layer.weight.dim(2);
  const long half = static_cast<long>(k / 2);
  Vec y(cout * h * w);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx) {
        Real acc = layer.bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long sy = static_cast<long>(yy + ky) - half, sx = static_cast<long>(xx + kx) - half;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
              acc += x[(ci * h + sy) * w + sx] * Real(layer.weight[((co * cin + ci) * k + ky) * k + kx]);
            }
        y[(co * h + yy) * w + xx] = acc;
      }
  return y;
}

/// [c r^2 x h x w] -> act(shuffle) [c x hr x wr]
Vec shuffle(const Vec& x, std::size_t channels, std::size_t h, std::size_t w, std::size_t r, Activation a) {
  const std::size_t c = channels / (r * r);
  Vec y(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < r; ++dy)
      for (std::size_t dx = 0; dx < r; ++dx)
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx)
            y[(ch * h * r + yy * r + dy) * w * r + xx * r + dx] = act(x[((ch * r * r + dy * r + dx) * h + yy) * w + xx], a);
  return y;
}

template <typename T>
Real mse(const Vec& pred, const BasicTensor<T>& target) {
  Real sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Real d = pred[i] - Real(target[i]);
    sum += d * d;
  }
  return sum / Real(pred.size());
}

template <typename T>
Real ffn_loss(const FfnModel<T>& m, const BasicTensor<T>& encoded, const BasicTensor<T>& target) {
  Vec x = widen(encoded);
  const std::size_t n = encoded.dim(0);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    x = affine(x, n, m.layers[l], l + 1 == m.layers.size() ? m.output_activation : m.hidden_activation);
  }
  return mse(x, target);
}

template <typename T>
Real block_loss(const NervBlockSlice<T>& s, const BasicTensor<T>& target) {
  const std::size_t h = s.input.dim(1), w = s.input.dim(2);
  return mse(shuffle(conv(widen(s.input), h, w, s.conv), s.conv.weight.dim(0), h, w, s.stride, s.activation), target);
}

template <typename T>
Real nerv_loss(const NervModel<T>& m, double t_norm, const BasicTensor<T>& target) {
  const Activation a = m.config.block_activation;
  Vec x = affine(widen(m.encoder.template encode<T>(t_norm)), 1, m.stem_hidden, a);
  x = affine(x, 1, m.stem_out, a);
  std::size_t h = m.base_height(), w = m.base_width();
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::size_t r = m.config.strides[i];
    x = shuffle(conv(x, h, w, m.blocks[i]), m.blocks[i].weight.dim(0), h, w, r, a);
    h *= r;
    w *= r;
  }
  x = conv(x, h, w, m.head);
  for (auto& v : x) v = act(v, m.config.head_activation);
  return mse(x, target);
}

}  // namespace reference

template <typename T>
constexpr double fd_step() {
  return std::is_same_v<T, float> ? 1e-3 : 1e-6;
}

void check_size(std::size_t count) {
  if (count > kGradCheckMaxParams) {
    throw ArgumentError("grad_check: model has " + std::to_string(count) + " parameters, limit is " +
                        std::to_string(kGradCheckMaxParams));
  }
}

/// `slots` are the model's trainable tensors, `analytic` the matching reverse-mode
/// gradients; `loss_of` re-evaluates the loss at the current parameter values.
template <typename T, typename LossFn>
GradCheckResult probe_gradients(const std::vector<BasicTensor<T>*>& slots, const std::vector<const BasicTensor<T>*>& analytic,
                                std::uint64_t probe_seed, std::size_t probes, LossFn&& loss_of) {
  std::vector<std::pair<std::size_t, std::size_t>> index;
  for (std::size_t k = 0; k < slots.size(); ++k)
    for (std::size_t i = 0; i < slots[k]->size(); ++i) index.emplace_back(k, i);
  check_size(index.size());

  GradCheckResult result;
  result.param_count = index.size();
  result.step = fd_step<T>();
  SeededRng rng(probe_seed ^ 0x5eedULL);
  for (std::size_t i = index.size() - 1; i > 0; --i) std::swap(index[i], index[rng.below(i + 1)]);
  result.probes = std::min(probes, index.size());
  for (std::size_t p = 0; p < result.probes; ++p) {
    const auto [k, i] = index[p];
    T& slot = (*slots[k])[i];
    const T original = slot;
    slot = static_cast<T>(original + result.step);
    const reference::Real up_arg = slot;
    const reference::Real up = loss_of();
    slot = static_cast<T>(original - result.step);
    const reference::Real down_arg = slot;
    const reference::Real down = loss_of();
    slot = original;
    const double fd = static_cast<double>((up - down) / (up_arg - down_arg));
    const double ad = static_cast<double>((*analytic[k])[i]);
    const double denom = std::max(std::abs(fd), std::abs(ad));
    const double rel = denom == 0.0 ? 0.0 : std::abs(fd - ad) / denom;
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

template <typename T, typename Model>
std::vector<BasicTensor<T>*> slots_of(Model& m) {
  std::vector<BasicTensor<T>*> out;
  for (auto& p : parameters(m)) out.push_back(p.tensor);
  return out;
}

template <typename T, typename Model>
std::vector<const BasicTensor<T>*> const_slots_of(Model& m) {
  std::vector<const BasicTensor<T>*> out;
  for (auto& p : parameters(m)) out.push_back(p.tensor);
  return out;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const FfnModel<T>& model, std::uint64_t probe_seed, std::size_t probes) {
  check_size(param_count(model));
  SeededRng rng(probe_seed);
  const std::size_t side = 6;
  const BasicTensor<T> encoded = model.encoder.encode(pixel_grid<T>(side, side));
  BasicTensor<T> target({side * side, model.config.outputs});
  for (auto& v : target.values()) v = static_cast<T>(rng.uniform());
  FfnModel<T> grads = zeros_like(model);
  ffn_loss_and_grad(model, encoded, target, &grads);

  FfnModel<T> probe = model;
  return probe_gradients<T>(slots_of<T>(probe), const_slots_of<T>(grads), probe_seed, probes,
                            [&] { return reference::ffn_loss(probe, encoded, target); });
}

template <typename T>
GradCheckResult grad_check(const NervModel<T>& model, std::uint64_t probe_seed, std::size_t probes) {
  check_size(param_count(model));
  SeededRng rng(probe_seed);
  BasicTensor<T> target({3, model.config.height, model.config.width});
  for (auto& v : target.values()) v = static_cast<T>(rng.uniform());
  const double t_norm = rng.uniform();
  NervModel<T> grads = zeros_like(model);
  nerv_loss_and_grad(model, t_norm, target, &grads);

  NervModel<T> probe = model;
  return probe_gradients<T>(slots_of<T>(probe), const_slots_of<T>(grads), probe_seed, probes,
                            [&] { return reference::nerv_loss(probe, t_norm, target); });
}

template <typename T>
GradCheckResult grad_check(const NervBlockSlice<T>& slice, std::uint64_t probe_seed, std::size_t probes) {
  check_size(slice.conv.weight.size() + slice.conv.bias.size());
  SeededRng rng(probe_seed);
  BasicTensor<T> target(forward_block(slice).shape());
  for (auto& v : target.values()) v = static_cast<T>(rng.uniform());
  ConvLayer<T> grads;
  block_loss_and_grad(slice, target, &grads);

  NervBlockSlice<T> probe = slice;
  return probe_gradients<T>({&probe.conv.weight, &probe.conv.bias}, {&grads.weight, &grads.bias}, probe_seed, probes,
                            [&] { return reference::block_loss(probe, target); });
}

#define XINC_INSTANTIATE_TRAINER(T)                                                                              \
  template TrainResult<FfnModel<T>> train(FfnModel<T>, std::span<const Tensor>, const TrainConfig&,             \
                                          const ProgressFn&);                                                  \
  template TrainResult<NervModel<T>> train(NervModel<T>, std::span<const Tensor>, const TrainConfig&,           \
                                           const ProgressFn&);                                                 \
  template double ffn_loss_and_grad(const FfnModel<T>&, const BasicTensor<T>&, const BasicTensor<T>&, FfnModel<T>*); \
  template double nerv_loss_and_grad(const NervModel<T>&, double, const BasicTensor<T>&, NervModel<T>*);        \
  template BasicTensor<T> frame_to_rows(const Tensor&);                                                         \
  template GradCheckResult grad_check(const FfnModel<T>&, std::uint64_t, std::size_t);                          \
  template GradCheckResult grad_check(const NervModel<T>&, std::uint64_t, std::size_t);                         \
  template GradCheckResult grad_check(const NervBlockSlice<T>&, std::uint64_t, std::size_t);                    \
  template BasicTensor<T> forward_block(const NervBlockSlice<T>&);                                               \
  template double block_loss_and_grad(const NervBlockSlice<T>&, const BasicTensor<T>&, ConvLayer<T>*);          \
  template FfnModel<T> micro_ffn(std::uint64_t);                                                                 \
  template NervBlockSlice<T> micro_nerv_block(std::uint64_t);

XINC_INSTANTIATE_TRAINER(float)
XINC_INSTANTIATE_TRAINER(double)

}  // namespace xinc
