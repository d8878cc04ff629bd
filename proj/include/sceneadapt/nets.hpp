#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "sceneadapt/diffcore/ops.hpp"
#include "sceneadapt/random.hpp"

namespace sceneadapt {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> value;
};

// Ordered, name-addressable parameter set. Element addresses are stable for
// the lifetime of the store, so tapes may reference them.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw UsageError("duplicate parameter name " + name);
    index_[name] = items_.size();
    items_.push_back({name, Tensor<T>(std::move(shape))});
    items_.back().value.set_requires_grad(true);
    return items_.back().value;
  }

  Tensor<T>& at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named " + name);
    return items_[it->second].value;
  }
  const Tensor<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named " + name);
    return items_[it->second].value;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad() {
    for (auto& p : items_) p.value.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

 private:
  std::deque<NamedParam<T>> items_;
  std::map<std::string, std::size_t> index_;
};

struct ConvLayer {
  std::string name;
  std::size_t cin, cout, kernel, stride, pad;
};

// Exact receptive field of one output cell of a conv stack:
// r <- r + (k - 1) * jump, jump <- jump * stride.
inline std::size_t receptive_field(const std::vector<ConvLayer>& layers) {
  std::size_t r = 1, jump = 1;
  for (const ConvLayer& l : layers) {
    r += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return r;
}

namespace detail {

// Uniform fan-in scaling: U(-b, b), b = sqrt(6 / ((1 + slope^2) * fan_in)).
template <class T>
void init_conv(ParamStore<T>& ps, const ConvLayer& l, Rng& rng, double slope) {
  Tensor<T>& w = ps.add(l.name + ".weight", Shape{l.cout, l.cin, l.kernel, l.kernel});
  Tensor<T>& b = ps.add(l.name + ".bias", Shape{l.cout});
  const double fan_in = static_cast<double>(l.cin * l.kernel * l.kernel);
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
  for (auto& v : w.storage()) v = static_cast<T>(uniform(rng, -bound, bound));
  std::fill(b.storage().begin(), b.storage().end(), T{0});
}

template <class T>
Var<T> apply_conv(Tape<T>& tape, ParamStore<T>& ps, const ConvLayer& l, const Var<T>& x, bool trainable) {
  return conv2d(x, tape.param(ps.at(l.name + ".weight"), trainable), tape.param(ps.at(l.name + ".bias"), trainable),
                l.stride, l.pad);
}

}  // namespace detail

inline constexpr double kLeakySlope = 0.2;

struct SegNetConfig {
  std::size_t classes = 8;
  std::size_t width = 16;
  std::size_t depth = 3;
};

// Segmentation network F: stride-2 encoder, nearest-upsampling decoder with
// additive skips from the encoder level of matching resolution, 1x1 class head.
template <class T>
class SegNetF {
 public:
  SegNetF(const SegNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.classes < 2) throw ConfigError("segmentation network needs at least 2 classes");
    if (cfg.width < 1 || cfg.depth < 1 || cfg.depth > 6) throw ConfigError("segmentation network width/depth out of range");
    stem_ = {"F.stem", 3, channels(0), 3, 1, 1};
    for (std::size_t i = 1; i <= cfg.depth; ++i)
      encoder_.push_back({"F.enc" + std::to_string(i), channels(i - 1), channels(i), 3, 2, 1});
    for (std::size_t i = cfg.depth; i >= 1; --i)
      decoder_.push_back({"F.dec" + std::to_string(i), channels(i), channels(i - 1), 3, 1, 1});
    head_ = {"F.head", channels(0), cfg.classes, 1, 1, 0};

    Rng rng(derive_seed({seed, 0xF}));
    detail::init_conv(params_, stem_, rng, kLeakySlope);
    for (const auto& l : encoder_) detail::init_conv(params_, l, rng, kLeakySlope);
    for (const auto& l : decoder_) detail::init_conv(params_, l, rng, kLeakySlope);
    detail::init_conv(params_, head_, rng, 1.0);
  }

  const SegNetConfig& config() const { return cfg_; }
  std::size_t required_divisor() const { return std::size_t{1} << cfg_.depth; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // (B,3,H,W) -> pre-softmax class scores (B,C,H,W).
  Var<T> forward(Tape<T>& tape, const Var<T>& image, bool trainable = true) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[1] != 3) throw ConfigError("segmentation network expects (B,3,H,W) input, got " + to_string(s));
    if (s[2] % required_divisor() || s[3] % required_divisor())
      throw ConfigError("input resolution " + std::to_string(s[3]) + "x" + std::to_string(s[2]) +
                        " not divisible by " + std::to_string(required_divisor()));
    const T slope = static_cast<T>(kLeakySlope);
    std::vector<Var<T>> skips;
    Var<T> h = leaky_relu(detail::apply_conv(tape, params_, stem_, image, trainable), slope);
    for (const auto& l : encoder_) {
      skips.push_back(h);
      h = leaky_relu(detail::apply_conv(tape, params_, l, h, trainable), slope);
    }
    for (const auto& l : decoder_) {
      h = leaky_relu(detail::apply_conv(tape, params_, l, upsample_nearest2x(h), trainable), slope);
      h = add(h, skips.back());
      skips.pop_back();
    }
    return detail::apply_conv(tape, params_, head_, h, trainable);
  }

 private:
  std::size_t channels(std::size_t level) const {
    return cfg_.width << std::min<std::size_t>(level == 0 ? 0 : level - 1, 2);
  }

  SegNetConfig cfg_;
  ConvLayer stem_, head_;
  std::vector<ConvLayer> encoder_, decoder_;
  ParamStore<T> params_;
};

// Per-thread construction counts of the training-only networks; evaluation
// code paths assert these stay unchanged.
struct NetworkCensus {
  static std::size_t& generators() {
    thread_local std::size_t n = 0;
    return n;
  }
  static std::size_t& discriminators() {
    thread_local std::size_t n = 0;
    return n;
  }
};

// Generator G: class scores (B,C,H,W) -> RGB reconstruction (B,3,H,W) in [0,1].
template <class T>
class GeneratorG {
 public:
  GeneratorG(std::size_t classes, std::uint64_t seed, std::size_t width = 16) : classes_(classes) {
    if (classes < 2) throw ConfigError("generator needs at least 2 input classes");
    ++NetworkCensus::generators();
    layers_ = {{"G.conv1", classes, width, 3, 1, 1}, {"G.conv2", width, width, 3, 1, 1}, {"G.out", width, 3, 3, 1, 1}};
    Rng rng(derive_seed({seed, 0x6}));
    for (std::size_t i = 0; i < layers_.size(); ++i)
      detail::init_conv(params_, layers_[i], rng, i + 1 < layers_.size() ? kLeakySlope : 1.0);
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  Var<T> forward(Tape<T>& tape, const Var<T>& scores, bool trainable = true) {
    const Shape& s = scores.shape();
    if (s.size() != 4 || s[1] != classes_)
      throw ConfigError("generator expects (B," + std::to_string(classes_) + ",H,W) scores, got " + to_string(s));
    Var<T> h = scores;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
      h = leaky_relu(detail::apply_conv(tape, params_, layers_[i], h, trainable), static_cast<T>(kLeakySlope));
    return sigmoid(detail::apply_conv(tape, params_, layers_.back(), h, trainable));
  }

 private:
  std::size_t classes_;
  std::vector<ConvLayer> layers_;
  ParamStore<T> params_;
};

// Patch discriminator D: stride-2 conv stack ending in a 1-channel map of raw
// patch scores (sigmoid is applied by the losses).
template <class T>
class DiscriminatorD {
 public:
  explicit DiscriminatorD(std::uint64_t seed, std::size_t width = 16, std::size_t blocks = 3) {
    ++NetworkCensus::discriminators();
    std::size_t cin = 3;
    for (std::size_t i = 0; i < blocks; ++i) {
      const std::size_t cout = width << std::min<std::size_t>(i, 2);
      layers_.push_back({"D.conv" + std::to_string(i + 1), cin, cout, 3, 2, 1});
      cin = cout;
    }
    layers_.push_back({"D.score", cin, 1, 1, 1, 0});
    Rng rng(derive_seed({seed, 0xD}));
    for (std::size_t i = 0; i < layers_.size(); ++i)
      detail::init_conv(params_, layers_[i], rng, i + 1 < layers_.size() ? kLeakySlope : 1.0);
  }

  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::size_t receptive_field() const { return sceneadapt::receptive_field(layers_); }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Score-grid extent along one axis for an input extent.
  std::size_t output_extent(std::size_t in) const {
    for (const auto& l : layers_) in = (in + 2 * l.pad - l.kernel) / l.stride + 1;
    return in;
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& image, bool trainable = true) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[1] != 3) throw ConfigError("discriminator expects (B,3,H,W) input, got " + to_string(s));
    Var<T> h = image;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
      h = leaky_relu(detail::apply_conv(tape, params_, layers_[i], h, trainable), static_cast<T>(kLeakySlope));
    return detail::apply_conv(tape, params_, layers_.back(), h, trainable);
  }

 private:
  std::vector<ConvLayer> layers_;
  ParamStore<T> params_;
};

template <class T = float>
SegNetF<T> build_f(std::size_t classes, std::size_t width, std::size_t depth, std::uint64_t seed) {
  return SegNetF<T>(SegNetConfig{classes, width, depth}, seed);
}

template <class T = float>
GeneratorG<T> build_g(std::size_t classes, std::uint64_t seed) {
  return GeneratorG<T>(classes, seed);
}

template <class T = float>
DiscriminatorD<T> build_d(std::uint64_t seed) {
  return DiscriminatorD<T>(seed);
}

}  // namespace sceneadapt
