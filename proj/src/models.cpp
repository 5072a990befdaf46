#include "xinc/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <set>

#include "detail/files.hpp"
#include "xinc/hash.hpp"
#include "xinc/rng.hpp"

namespace xinc {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

namespace {

// Kaiming-uniform over fan-in with negative slope sqrt(5): bound = 1 / sqrt(fan_in).
template <typename T>
void kaiming_uniform(BasicTensor<T>& w, std::size_t fan_in, SeededRng rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
AffineLayer<T> make_affine(std::size_t in, std::size_t out, SeededRng rng) {
  AffineLayer<T> layer{BasicTensor<T>({in, out}), BasicTensor<T>({out})};
  kaiming_uniform(layer.weight, in, rng);
  return layer;
}

template <typename T>
ConvLayer<T> make_conv(std::size_t in, std::size_t out, int k, SeededRng rng) {
  const auto ku = static_cast<std::size_t>(k);
  ConvLayer<T> layer{BasicTensor<T>({out, in, ku, ku}), BasicTensor<T>({out})};
  kaiming_uniform(layer.weight, in * ku * ku, rng);
  return layer;
}

std::size_t stride_product(const NervConfig& c) {
  std::size_t p = 1;
  for (int s : c.strides) {
    if (s < 1) throw ConfigError("stride must be >= 1, got " + std::to_string(s));
    p *= static_cast<std::size_t>(s);
  }
  return p;
}

void validate(const NervConfig& c) {
  const std::size_t p = stride_product(c);
  if (c.height == 0 || c.width == 0 || c.height % p != 0 || c.width % p != 0) {
    throw ConfigError("resolution " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                      " is not divisible by the stride product " + std::to_string(p));
  }
  if (c.block_kernel % 2 == 0 || c.head_kernel % 2 == 0 || c.block_kernel < 1 || c.head_kernel < 1) {
    throw ConfigError("kernel sizes must be odd");
  }
  if (c.pe_length == 0 || c.stem_hidden == 0) throw ConfigError("positional encoding and stem must be non-empty");
  if (c.width_decay <= 0.0) throw ConfigError("width decay must be positive");
}

template <typename T>
void append_f32(std::vector<float>& out, const BasicTensor<T>& t) {
  for (T v : t.values()) out.push_back(static_cast<float>(v));
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(std::string("unknown key '") + it.key() + "' in " + what);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// FFN

template <typename T>
BasicTensor<T> FourierEncoder<T>::encode(const BasicTensor<T>& coords) const {
  if (coords.rank() != 2 || coords.dim(1) != 2) {
    throw DimensionError("fourier encode: coords must be [N x 2], got " + shape_string(coords.shape()));
  }
  const std::size_t n = coords.dim(0), f = frequencies.dim(0);
  BasicTensor<T> out({n, 2 * f});
  for (std::size_t i = 0; i < n; ++i) {
    const double x = coords[2 * i], y = coords[2 * i + 1];
    T* row = out.ptr() + i * 2 * f;
    for (std::size_t q = 0; q < f; ++q) {
      const double phase =
          2.0 * std::numbers::pi * (static_cast<double>(frequencies[2 * q]) * x + static_cast<double>(frequencies[2 * q + 1]) * y);
      row[q] = static_cast<T>(std::cos(phase));
      row[f + q] = static_cast<T>(std::sin(phase));
    }
  }
  return out;
}

template <typename T>
FfnModel<T> build_ffn(std::uint64_t seed, const FfnConfig& config) {
  if (config.frequencies == 0 || config.outputs == 0) throw ConfigError("FFN needs frequencies and outputs");
  for (auto h : config.hidden) {
    if (h == 0) throw ConfigError("FFN hidden layers must be non-empty");
  }
  FfnModel<T> model;
  model.config = config;
  model.seed = seed;
  SeededRng root(seed);
  SeededRng enc_rng = root.fork(0);
  model.encoder.sigma = config.sigma;
  model.encoder.frequencies = BasicTensor<T>({config.frequencies, 2});
  for (auto& v : model.encoder.frequencies.values()) v = static_cast<T>(config.sigma * enc_rng.normal());

  std::vector<std::size_t> dims{2 * config.frequencies};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(config.outputs);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    model.layers.push_back(make_affine<T>(dims[l], dims[l + 1], root.fork(1 + l)));
  }
  return model;
}

template <typename T>
BasicTensor<T> pixel_grid(std::size_t height, std::size_t width) {
  BasicTensor<T> coords({height * width, 2});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t p = y * width + x;
      coords[2 * p] = static_cast<T>((static_cast<double>(x) + 0.5) / static_cast<double>(width));
      coords[2 * p + 1] = static_cast<T>((static_cast<double>(y) + 0.5) / static_cast<double>(height));
    }
  return coords;
}

template <typename T>
BasicTensor<T> forward_ffn(const FfnModel<T>& model, const BasicTensor<T>& coords, FfnTrace<T>* trace) {
  BasicTensor<T> v = model.encoder.encode(coords);
  if (trace) {
    trace->encoded = v;
    trace->pre.clear();
    trace->post.clear();
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    BasicTensor<T> z = matmul(v, layer.weight);
    add_row_bias(z, layer.bias);
    const bool last = l + 1 == model.layers.size();
    BasicTensor<T> a = activation(z, last ? model.output_activation : model.hidden_activation);
    if (trace) {
      trace->pre.push_back(std::move(z));
      trace->post.push_back(a);
    }
    v = std::move(a);
  }
  return v;
}

// ---------------------------------------------------------------------------
// NeRV

std::vector<std::size_t> nerv_width_schedule(const NervConfig& config, std::size_t base_width) {
  std::vector<std::size_t> ch{base_width};
  for (std::size_t i = 0; i < config.strides.size(); ++i) {
    const double next = std::round(static_cast<double>(ch.back()) / config.width_decay);
    ch.push_back(std::max(static_cast<std::size_t>(next), config.min_width));
  }
  return ch;
}

std::size_t nerv_param_count(const NervConfig& c, const std::vector<std::size_t>& ch) {
  if (ch.size() != c.strides.size() + 1) {
    throw ConfigError("expected " + std::to_string(c.strides.size() + 1) + " stage widths, got " +
                      std::to_string(ch.size()));
  }
  const std::size_t p = stride_product(c);
  const std::size_t volume = ch[0] * (c.height / p) * (c.width / p);
  const std::size_t pe = 2 * c.pe_length;
  std::size_t n = pe * c.stem_hidden + c.stem_hidden + c.stem_hidden * volume + volume;
  const auto kb = static_cast<std::size_t>(c.block_kernel * c.block_kernel);
  for (std::size_t i = 0; i < c.strides.size(); ++i) {
    const std::size_t s2 = static_cast<std::size_t>(c.strides[i] * c.strides[i]);
    const std::size_t out = ch[i + 1] * s2;
    n += kb * ch[i] * out + out;
  }
  const auto kh = static_cast<std::size_t>(c.head_kernel * c.head_kernel);
  return n + kh * ch.back() * 3 + 3;
}

NervWidths solve_nerv_widths(const NervConfig& config) {
  validate(config);
  std::optional<NervWidths> best;
  std::size_t best_gap = 0;
  for (std::size_t c0 = 1; c0 <= config.max_base_width; ++c0) {
    auto ch = nerv_width_schedule(config, c0);
    const std::size_t n = nerv_param_count(config, ch);
    if (n > config.max_params) break;  // count is monotone in C_0
    const std::size_t gap = n > config.target_params ? n - config.target_params : config.target_params - n;
    if (!best || gap < best_gap) {
      best = NervWidths{std::move(ch), n};
      best_gap = gap;
    }
  }
  if (!best) {
    throw ConfigError("no base width in [1, " + std::to_string(config.max_base_width) + "] yields at most " +
                      std::to_string(config.max_params) + " parameters");
  }
  return *best;
}

template <typename T>
BasicTensor<T> NervPositionalEncoder::encode(double t_norm) const {
  BasicTensor<T> out({1, 2 * length});
  for (std::size_t j = 0; j < length; ++j) {
    const double arg = std::pow(base, static_cast<double>(j)) * std::numbers::pi * t_norm;
    out[2 * j] = static_cast<T>(std::sin(arg));
    out[2 * j + 1] = static_cast<T>(std::cos(arg));
  }
  return out;
}

template <typename T>
std::size_t NervModel<T>::base_height() const {
  return config.height / stride_product(config);
}
template <typename T>
std::size_t NervModel<T>::base_width() const {
  return config.width / stride_product(config);
}
template <typename T>
std::pair<std::size_t, std::size_t> NervModel<T>::resolution(std::size_t stage) const {
  std::size_t h = base_height(), w = base_width();
  for (std::size_t i = 0; i < stage && i < config.strides.size(); ++i) {
    h *= static_cast<std::size_t>(config.strides[i]);
    w *= static_cast<std::size_t>(config.strides[i]);
  }
  return {h, w};
}

template <typename T>
NervModel<T> build_nerv(std::uint64_t seed, const NervConfig& config) {
  validate(config);
  NervModel<T> m;
  m.config = config;
  m.seed = seed;
  m.encoder = NervPositionalEncoder{config.pe_base, config.pe_length};
  if (!config.widths.empty()) {
    m.channels = config.widths;
    nerv_param_count(config, m.channels);  // validates the width count
  } else {
    m.channels = solve_nerv_widths(config).channels;
  }
  SeededRng root(seed);
  const std::size_t volume = m.channels[0] * m.base_height() * m.base_width();
  m.stem_hidden = make_affine<T>(m.encoder.output_dim(), config.stem_hidden, root.fork(0));
  m.stem_out = make_affine<T>(config.stem_hidden, volume, root.fork(1));
  for (std::size_t i = 0; i < config.strides.size(); ++i) {
    const auto s2 = static_cast<std::size_t>(config.strides[i] * config.strides[i]);
    m.blocks.push_back(make_conv<T>(m.channels[i], m.channels[i + 1] * s2, config.block_kernel, root.fork(2 + i)));
  }
  m.head = make_conv<T>(m.channels.back(), 3, config.head_kernel, root.fork(100));
  return m;
}

double nerv_time(std::size_t t_index, std::size_t t_count) {
  if (t_count == 0 || t_index >= t_count) {
    throw ArgumentError("frame index " + std::to_string(t_index) + " outside [0, " + std::to_string(t_count) + ")");
  }
  return static_cast<double>(t_index) / static_cast<double>(t_count);
}

template <typename T>
BasicTensor<T> forward_nerv_at(const NervModel<T>& model, double t_norm, NervTrace<T>* trace) {
  const Activation act = model.config.block_activation;
  BasicTensor<T> emb = model.encoder.template encode<T>(t_norm);
  BasicTensor<T> z1 = matmul(emb, model.stem_hidden.weight);
  add_row_bias(z1, model.stem_hidden.bias);
  BasicTensor<T> a1 = activation(z1, act);
  BasicTensor<T> z2 = matmul(a1, model.stem_out.weight);
  add_row_bias(z2, model.stem_out.bias);
  BasicTensor<T> x = activation(z2, act);
  x.reshape({model.channels[0], model.base_height(), model.base_width()});
  if (trace) {
    trace->embedding = emb;
    trace->stem_hidden_pre = std::move(z1);
    trace->stem_hidden_post = std::move(a1);
    trace->stem_pre = std::move(z2);
    trace->stem_post = x;
    trace->block_input.clear();
    trace->block_conv.clear();
    trace->block_pre.clear();
    trace->block_post.clear();
  }
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    BasicTensor<T> conv = conv2d(x, model.blocks[i].weight, model.blocks[i].bias);
    BasicTensor<T> pre = pixel_shuffle(conv, model.config.strides[i]);
    BasicTensor<T> post = activation(pre, act);
    if (trace) {
      trace->block_input.push_back(std::move(x));
      trace->block_conv.push_back(std::move(conv));
      trace->block_pre.push_back(std::move(pre));
      trace->block_post.push_back(post);
    }
    x = std::move(post);
  }
  BasicTensor<T> head_pre = conv2d(x, model.head.weight, model.head.bias);
  BasicTensor<T> out = activation(head_pre, model.config.head_activation);
  if (trace) {
    trace->head_input = std::move(x);
    trace->head_pre = std::move(head_pre);
    trace->output = out;
  }
  return out;
}

template <typename T>
BasicTensor<T> forward_nerv(const NervModel<T>& model, std::size_t t_index, std::size_t t_count, NervTrace<T>* trace) {
  return forward_nerv_at(model, nerv_time(t_index, t_count), trace);
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
std::vector<NamedParam<T>> parameters(FfnModel<T>& model) {
  std::vector<NamedParam<T>> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l + 1);
    out.push_back({prefix + ".weight", &model.layers[l].weight});
    out.push_back({prefix + ".bias", &model.layers[l].bias});
  }
  return out;
}

template <typename T>
std::vector<NamedParam<T>> parameters(NervModel<T>& model) {
  std::vector<NamedParam<T>> out;
  out.push_back({"stem.0.weight", &model.stem_hidden.weight});
  out.push_back({"stem.0.bias", &model.stem_hidden.bias});
  out.push_back({"stem.1.weight", &model.stem_out.weight});
  out.push_back({"stem.1.bias", &model.stem_out.bias});
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i + 1);
    out.push_back({prefix + ".weight", &model.blocks[i].weight});
    out.push_back({prefix + ".bias", &model.blocks[i].bias});
  }
  out.push_back({"head.weight", &model.head.weight});
  out.push_back({"head.bias", &model.head.bias});
  return out;
}

template <typename T>
std::vector<ConstNamedParam<T>> parameters(const FfnModel<T>& model) {
  std::vector<ConstNamedParam<T>> out;
  for (auto& p : parameters(const_cast<FfnModel<T>&>(model))) out.push_back({p.name, p.tensor});
  return out;
}

template <typename T>
std::vector<ConstNamedParam<T>> parameters(const NervModel<T>& model) {
  std::vector<ConstNamedParam<T>> out;
  for (auto& p : parameters(const_cast<NervModel<T>&>(model))) out.push_back({p.name, p.tensor});
  return out;
}

template <typename T>
std::size_t param_count(const FfnModel<T>& model) {
  std::size_t n = 0;
  for (const auto& p : parameters(model)) n += p.tensor->size();
  return n;
}

template <typename T>
std::size_t param_count(const NervModel<T>& model) {
  std::size_t n = 0;
  for (const auto& p : parameters(model)) n += p.tensor->size();
  return n;
}

template <typename T>
FfnModel<T> zeros_like(const FfnModel<T>& model) {
  FfnModel<T> z = model;
  for (auto& p : parameters(z)) p.tensor->fill(T(0));
  return z;
}

template <typename T>
NervModel<T> zeros_like(const NervModel<T>& model) {
  NervModel<T> z = model;
  for (auto& p : parameters(z)) p.tensor->fill(T(0));
  return z;
}

template <typename To, typename From>
FfnModel<To> cast_model(const FfnModel<From>& model) {
  FfnModel<To> out;
  out.config = model.config;
  out.seed = model.seed;
  out.encoder.sigma = model.encoder.sigma;
  out.encoder.frequencies = model.encoder.frequencies.template cast<To>();
  out.hidden_activation = model.hidden_activation;
  out.output_activation = model.output_activation;
  for (const auto& l : model.layers) out.layers.push_back({l.weight.template cast<To>(), l.bias.template cast<To>()});
  return out;
}

template <typename To, typename From>
NervModel<To> cast_model(const NervModel<From>& model) {
  NervModel<To> out;
  out.config = model.config;
  out.seed = model.seed;
  out.encoder = model.encoder;
  out.channels = model.channels;
  out.stem_hidden = {model.stem_hidden.weight.template cast<To>(), model.stem_hidden.bias.template cast<To>()};
  out.stem_out = {model.stem_out.weight.template cast<To>(), model.stem_out.bias.template cast<To>()};
  for (const auto& b : model.blocks) out.blocks.push_back({b.weight.template cast<To>(), b.bias.template cast<To>()});
  out.head = {model.head.weight.template cast<To>(), model.head.bias.template cast<To>()};
  return out;
}

// ---------------------------------------------------------------------------
// Descriptors and checkpoints

nlohmann::json describe(const FfnConfig& c) {
  return {{"frequencies", c.frequencies}, {"hidden", c.hidden}, {"outputs", c.outputs}, {"sigma", c.sigma}};
}

nlohmann::json describe(const NervConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"strides", c.strides},
          {"block_kernel", c.block_kernel},
          {"head_kernel", c.head_kernel},
          {"pe_base", c.pe_base},
          {"pe_length", c.pe_length},
          {"stem_hidden", c.stem_hidden},
          {"width_decay", c.width_decay},
          {"min_width", c.min_width},
          {"target_params", c.target_params},
          {"max_params", c.max_params},
          {"max_base_width", c.max_base_width},
          {"block_activation", to_string(c.block_activation)},
          {"head_activation", to_string(c.head_activation)},
          {"widths", c.widths}};
}

FfnConfig ffn_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"frequencies", "hidden", "outputs", "sigma"}, "ffn config");
  FfnConfig c;
  try {
    c.frequencies = j.value("frequencies", c.frequencies);
    c.hidden = j.value("hidden", c.hidden);
    c.outputs = j.value("outputs", c.outputs);
    c.sigma = j.value("sigma", c.sigma);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ffn config: ") + e.what());
  }
  return c;
}

NervConfig nerv_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                       {"height", "width", "strides", "block_kernel", "head_kernel", "pe_base", "pe_length",
                        "stem_hidden", "width_decay", "min_width", "target_params", "max_params", "max_base_width",
                        "block_activation", "head_activation", "widths"},
                       "nerv config");
  NervConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.strides = j.value("strides", c.strides);
    c.block_kernel = j.value("block_kernel", c.block_kernel);
    c.head_kernel = j.value("head_kernel", c.head_kernel);
    c.pe_base = j.value("pe_base", c.pe_base);
    c.pe_length = j.value("pe_length", c.pe_length);
    c.stem_hidden = j.value("stem_hidden", c.stem_hidden);
    c.width_decay = j.value("width_decay", c.width_decay);
    c.min_width = j.value("min_width", c.min_width);
    c.target_params = j.value("target_params", c.target_params);
    c.max_params = j.value("max_params", c.max_params);
    c.max_base_width = j.value("max_base_width", c.max_base_width);
    if (j.contains("block_activation")) c.block_activation = parse_activation(j["block_activation"].get<std::string>());
    if (j.contains("head_activation")) c.head_activation = parse_activation(j["head_activation"].get<std::string>());
    c.widths = j.value("widths", c.widths);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("nerv config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("nerv config: ") + e.what());
  }
  validate(c);
  return c;
}

namespace {

struct Packed {
  std::vector<float> values;
  nlohmann::json tensors = nlohmann::json::array();
};

template <typename T>
void pack(Packed& p, const std::string& name, const BasicTensor<T>& t, bool trainable) {
  p.tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", p.values.size() * sizeof(float)},
                       {"count", t.size()},
                       {"trainable", trainable}});
  append_f32(p.values, t);
}

template <typename T>
Packed pack_model(const FfnModel<T>& m) {
  Packed p;
  pack(p, "encoder.frequencies", m.encoder.frequencies, false);
  for (const auto& np : parameters(m)) pack(p, np.name, *np.tensor, true);
  return p;
}

template <typename T>
Packed pack_model(const NervModel<T>& m) {
  Packed p;
  for (const auto& np : parameters(m)) pack(p, np.name, *np.tensor, true);
  return p;
}

std::string hash_packed(const nlohmann::json& arch, const Packed& p) {
  Fnv1a h;
  h.update(arch.dump());
  h.update_values(std::span<const float>(p.values));
  return h.hex();
}

template <typename T>
nlohmann::json architecture(const FfnModel<T>& m) {
  return {{"kind", "ffn"},
          {"config", describe(m.config)},
          {"seed", m.seed},
          {"hidden_activation", to_string(m.hidden_activation)},
          {"output_activation", to_string(m.output_activation)}};
}

template <typename T>
nlohmann::json architecture(const NervModel<T>& m) {
  return {{"kind", "nerv"}, {"config", describe(m.config)}, {"seed", m.seed}, {"channels", m.channels}};
}

template <typename Model>
nlohmann::json manifest_for(const Model& m, const Packed& p, std::size_t params) {
  const nlohmann::json arch = architecture(m);
  nlohmann::json j = {{"format", "xinc-model"},
                      {"version", 1},
                      {"architecture", arch},
                      {"param_count", params},
                      {"model_hash", hash_packed(arch, p)},
                      {"weights_file", "weights.bin"},
                      {"weights_bytes", p.values.size() * sizeof(float)},
                      {"dtype", "f32le"},
                      {"tensors", p.tensors}};
  return j;
}

void write_checkpoint(const std::filesystem::path& dir, nlohmann::json manifest, const Packed& p,
                      const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  if (!extra.is_null()) manifest["training"] = extra;
  detail::write_bytes(dir / "weights.bin", p.values.data(), p.values.size() * sizeof(float));
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

template <typename T>
void unpack(const nlohmann::json& manifest, const std::vector<char>& bytes, const std::string& name,
            BasicTensor<T>& target) {
  for (const auto& t : manifest["tensors"]) {
    if (t["name"] != name) continue;
    const Shape shape = t["shape"].get<Shape>();
    if (shape != target.shape()) {
      throw IntegrityError("tensor " + name + " has shape " + shape_string(shape) + ", architecture expects " +
                           shape_string(target.shape()));
    }
    const std::size_t offset = t["offset"].get<std::size_t>();
    const std::size_t count = t["count"].get<std::size_t>();
    if (offset + count * sizeof(float) > bytes.size()) throw IntegrityError("tensor " + name + " exceeds weights file");
    std::vector<float> buf(count);
    std::memcpy(buf.data(), bytes.data() + offset, count * sizeof(float));
    for (std::size_t i = 0; i < count; ++i) target[i] = static_cast<T>(buf[i]);
    return;
  }
  throw IntegrityError("weights manifest lacks tensor " + name);
}

std::vector<char> read_weights(const std::filesystem::path& dir, const nlohmann::json& manifest) {
  auto bytes = detail::read_bytes(dir / manifest.value("weights_file", std::string("weights.bin")));
  if (bytes.size() != manifest["weights_bytes"].get<std::size_t>()) {
    throw IntegrityError("weights file is " + std::to_string(bytes.size()) + " bytes, manifest declares " +
                         std::to_string(manifest["weights_bytes"].get<std::size_t>()));
  }
  return bytes;
}

}  // namespace

template <typename T>
std::string model_hash(const FfnModel<T>& model) {
  return hash_packed(architecture(model), pack_model(model));
}
template <typename T>
std::string model_hash(const NervModel<T>& model) {
  return hash_packed(architecture(model), pack_model(model));
}

template <typename T>
nlohmann::json model_manifest(const FfnModel<T>& model) {
  return manifest_for(model, pack_model(model), param_count(model));
}

template <typename T>
nlohmann::json model_manifest(const NervModel<T>& model) {
  auto j = manifest_for(model, pack_model(model), param_count(model));
  j["channels"] = model.channels;
  j["param_target"] = model.config.target_params;
  j["param_ceiling"] = model.config.max_params;
  j["reference_param_count"] = 978557;
  return j;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const FfnModel<T>& model, const nlohmann::json& extra) {
  write_checkpoint(dir, model_manifest(model), pack_model(model), extra);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NervModel<T>& model, const nlohmann::json& extra) {
  write_checkpoint(dir, model_manifest(model), pack_model(model), extra);
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw IntegrityError("manifest " + (dir / "manifest.json").string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "xinc-model") throw IntegrityError("not a model manifest: " + dir.string());
  if (j.value("version", 0) != 1) {
    throw IntegrityError("unsupported model manifest version " + std::to_string(j.value("version", 0)));
  }
  return j;
}

std::string checkpoint_kind(const std::filesystem::path& dir) {
  return read_manifest(dir)["architecture"]["kind"].get<std::string>();
}

FfnModel<float> load_ffn(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  const auto& arch = manifest["architecture"];
  if (arch["kind"] != "ffn") throw IntegrityError(dir.string() + " holds a " + arch["kind"].get<std::string>() + " model");
  auto model = build_ffn<float>(arch["seed"].get<std::uint64_t>(), ffn_config_from_json(arch["config"]));
  model.hidden_activation = parse_activation(arch["hidden_activation"].get<std::string>());
  model.output_activation = parse_activation(arch["output_activation"].get<std::string>());
  const auto bytes = read_weights(dir, manifest);
  unpack(manifest, bytes, "encoder.frequencies", model.encoder.frequencies);
  for (auto& p : parameters(model)) unpack(manifest, bytes, p.name, *p.tensor);
  if (model_hash(model) != manifest["model_hash"].get<std::string>()) {
    throw IntegrityError("model hash mismatch for " + dir.string());
  }
  return model;
}

NervModel<float> load_nerv(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  const auto& arch = manifest["architecture"];
  if (arch["kind"] != "nerv") throw IntegrityError(dir.string() + " holds a " + arch["kind"].get<std::string>() + " model");
  NervConfig cfg = nerv_config_from_json(arch["config"]);
  const auto channels = arch["channels"].get<std::vector<std::size_t>>();
  NervConfig build_cfg = cfg;
  build_cfg.widths = channels;
  auto model = build_nerv<float>(arch["seed"].get<std::uint64_t>(), build_cfg);
  model.config = cfg;
  const auto bytes = read_weights(dir, manifest);
  for (auto& p : parameters(model)) unpack(manifest, bytes, p.name, *p.tensor);
  if (model_hash(model) != manifest["model_hash"].get<std::string>()) {
    throw IntegrityError("model hash mismatch for " + dir.string());
  }
  return model;
}

#define XINC_INSTANTIATE_MODELS(T)                                                                   \
  template struct FourierEncoder<T>;                                                                 \
  template struct NervModel<T>;                                                                      \
  template FfnModel<T> build_ffn(std::uint64_t, const FfnConfig&);                                   \
  template BasicTensor<T> forward_ffn(const FfnModel<T>&, const BasicTensor<T>&, FfnTrace<T>*);      \
  template BasicTensor<T> pixel_grid(std::size_t, std::size_t);                                      \
  template BasicTensor<T> NervPositionalEncoder::encode<T>(double) const;                            \
  template NervModel<T> build_nerv(std::uint64_t, const NervConfig&);                                \
  template BasicTensor<T> forward_nerv(const NervModel<T>&, std::size_t, std::size_t, NervTrace<T>*); \
  template BasicTensor<T> forward_nerv_at(const NervModel<T>&, double, NervTrace<T>*);               \
  template std::vector<NamedParam<T>> parameters(FfnModel<T>&);                                      \
  template std::vector<NamedParam<T>> parameters(NervModel<T>&);                                     \
  template std::vector<ConstNamedParam<T>> parameters(const FfnModel<T>&);                           \
  template std::vector<ConstNamedParam<T>> parameters(const NervModel<T>&);                          \
  template std::size_t param_count(const FfnModel<T>&);                                              \
  template std::size_t param_count(const NervModel<T>&);                                             \
  template FfnModel<T> zeros_like(const FfnModel<T>&);                                               \
  template NervModel<T> zeros_like(const NervModel<T>&);                                             \
  template std::string model_hash(const FfnModel<T>&);                                               \
  template std::string model_hash(const NervModel<T>&);                                              \
  template nlohmann::json model_manifest(const FfnModel<T>&);                                        \
  template nlohmann::json model_manifest(const NervModel<T>&);                                       \
  template void save_checkpoint(const std::filesystem::path&, const FfnModel<T>&, const nlohmann::json&); \
  template void save_checkpoint(const std::filesystem::path&, const NervModel<T>&, const nlohmann::json&);

XINC_INSTANTIATE_MODELS(float)
XINC_INSTANTIATE_MODELS(double)

template FfnModel<float> cast_model(const FfnModel<double>&);
template FfnModel<double> cast_model(const FfnModel<float>&);
template FfnModel<float> cast_model(const FfnModel<float>&);
template NervModel<float> cast_model(const NervModel<double>&);
template NervModel<double> cast_model(const NervModel<float>&);
template NervModel<float> cast_model(const NervModel<float>&);
template FfnModel<double> cast_model(const FfnModel<double>&);
template NervModel<double> cast_model(const NervModel<double>&);

}  // namespace xinc
