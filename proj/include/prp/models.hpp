#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "prp/error.hpp"
#include "prp/layers.hpp"
#include "prp/linalg.hpp"
#include "prp/projections.hpp"
#include "prp/rng.hpp"

namespace prp {

enum class Activation { ReLU, Sigmoid, Identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  for (auto a : {Activation::ReLU, Activation::Sigmoid, Activation::Identity})
    if (s == to_string(a)) return a;
  throw Error("unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: return x;
  }
  return x;
}

/// Derivative in terms of the pre-activation `x` and output `y`.
/// ReLU uses subgradient 0 at the kink.
inline double activate_derivative(Activation a, double x, double y) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

using Layer = std::variant<DenseLayer, PRPLayer>;

inline std::size_t layer_d_in(const Layer& l) {
  return std::visit([](const auto& x) { return x.d_in(); }, l);
}
inline std::size_t layer_d_out(const Layer& l) {
  return std::visit([](const auto& x) { return x.d_out(); }, l);
}
inline std::size_t param_count(const Layer& l) {
  return std::visit([](const auto& x) { return x.param_count(); }, l);
}

struct Stage {
  Layer layer;
  Activation activation = Activation::Identity;
  /// For a tied decoder stage: index of the stage whose projection storage
  /// this stage's (transposed) projection shares.
  std::optional<std::size_t> tied_to;
};

class Sequential {
 public:
  void add(Layer layer, Activation activation, std::optional<std::size_t> tied_to = {}) {
    if (!stages_.empty() && layer_d_out(stages_.back().layer) != layer_d_in(layer)) {
      throw DimensionError("Sequential: stage " + std::to_string(stages_.size()) +
                           " expects input width " + std::to_string(layer_d_in(layer)) +
                           " but the previous stage produces " +
                           std::to_string(layer_d_out(stages_.back().layer)));
    }
    stages_.push_back({std::move(layer), activation, tied_to});
    pre_.emplace_back();
    post_.emplace_back();
  }

  std::size_t size() const noexcept { return stages_.size(); }
  Stage& stage(std::size_t k) { return stages_.at(k); }
  const Stage& stage(std::size_t k) const { return stages_.at(k); }
  std::vector<Stage>& stages() noexcept { return stages_; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }

  std::size_t d_in() const { return layer_d_in(stages_.front().layer); }
  std::size_t d_out() const { return layer_d_out(stages_.back().layer); }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& s : stages_) total += prp::param_count(s.layer);
    return total;
  }

  /// Widths d_in, then each stage's output width.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{d_in()};
    for (const auto& s : stages_) w.push_back(layer_d_out(s.layer));
    return w;
  }

  /// Every learnable parameter, prefixed "stage<k>.".
  std::vector<ParamView> parameters() {
    std::vector<ParamView> out;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      auto ps = std::visit([](auto& l) { return l.parameters(); }, stages_[k].layer);
      for (auto& p : ps) {
        p.name = "stage" + std::to_string(k) + "." + p.name;
        out.push_back(std::move(p));
      }
    }
    return out;
  }

  Matrix forward(const Matrix& x) {
    if (stages_.empty()) throw Error("Sequential: empty model");
    if (x.cols() != d_in()) {
      throw DimensionError("model_forward: input " + shape_str(x.rows(), x.cols()) +
                           " for model with input width " + std::to_string(d_in()));
    }
    const Matrix* in = &x;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      pre_[k] = std::visit([&](auto& l) { return l.forward(*in); }, stages_[k].layer);
      const Activation a = stages_[k].activation;
      post_[k] = pre_[k];
      if (a != Activation::Identity)
        for (auto& v : post_[k].span()) v = activate(a, v);
      in = &post_[k];
    }
    has_cache_ = true;
    return post_.back();
  }

  /// Flattened gradients aligned with parameters(). No gradient is produced
  /// for the model input.
  std::vector<NamedArray> backward(const Matrix& dloss_dy) {
    if (!has_cache_) throw StateError("model_backward called before forward");
    if (dloss_dy.rows() != post_.back().rows() || dloss_dy.cols() != d_out()) {
      throw DimensionError("model_backward: gradient " + shape_str(dloss_dy.rows(), dloss_dy.cols()) +
                           " does not match output " +
                           shape_str(post_.back().rows(), post_.back().cols()));
    }
    std::vector<GradientSet> per_stage(stages_.size());
    Matrix upstream = dloss_dy;
    Matrix dx;
    for (std::size_t k = stages_.size(); k-- > 0;) {
      const Activation a = stages_[k].activation;
      if (a != Activation::Identity) {
        const auto pre = pre_[k].span();
        const auto post = post_[k].span();
        auto up = upstream.span();
        for (std::size_t i = 0; i < up.size(); ++i)
          up[i] *= activate_derivative(a, pre[i], post[i]);
      }
      Matrix* dx_ptr = k > 0 ? &dx : nullptr;
      per_stage[k] =
          std::visit([&](auto& l) { return l.backward(upstream, dx_ptr); }, stages_[k].layer);
      if (k > 0) std::swap(upstream, dx);
    }
    std::vector<NamedArray> flat;
    for (std::size_t k = 0; k < per_stage.size(); ++k) {
      for (auto& g : per_stage[k]) {
        g.name = "stage" + std::to_string(k) + "." + g.name;
        flat.push_back(std::move(g));
      }
    }
    return flat;
  }

 private:
  std::vector<Stage> stages_;
  std::vector<Matrix> pre_;
  std::vector<Matrix> post_;
  bool has_cache_ = false;
};

enum class ModelKind { Prp, Dense, LowRankDense };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Prp: return "prp";
    case ModelKind::Dense: return "dense";
    case ModelKind::LowRankDense: return "lowrank";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::Prp, ModelKind::Dense, ModelKind::LowRankDense})
    if (s == to_string(k)) return k;
  throw Error("unknown model kind '" + std::string(s) + "' (expected prp|dense|lowrank)");
}

/// Width sequence and activations for one of the registered networks.
struct ArchitectureDescriptor {
  std::string name;
  std::vector<std::size_t> widths;          // d_in, hidden..., d_out
  std::vector<std::size_t> lowrank_widths;  // empty when there is no bottleneck baseline
  Activation hidden = Activation::ReLU;
  Activation output = Activation::Identity;
  InitScheme projection_scheme = InitScheme::Gaussian;
  bool tied_autoencoder = false;
};

inline const std::vector<ArchitectureDescriptor>& architecture_registry() {
  static const std::vector<ArchitectureDescriptor> registry = {
      {"linear", {2, 1}, {}, Activation::ReLU, Activation::Identity, InitScheme::Gaussian, false},
      {"xor", {2, 16, 1}, {}, Activation::ReLU, Activation::Identity, InitScheme::Gaussian, false},
      {"circles", {2, 16, 1}, {}, Activation::ReLU, Activation::Identity, InitScheme::Gaussian,
       false},
      {"checkerboard", {2, 16, 1}, {}, Activation::ReLU, Activation::Identity,
       InitScheme::Gaussian, false},
      {"polynomial", {1, 64, 64, 1}, {}, Activation::ReLU, Activation::Identity,
       InitScheme::Gaussian, false},
      {"mnist_mlp", {784, 512, 256, 10}, {784, 4, 256, 10}, Activation::ReLU,
       Activation::Identity, InitScheme::Gaussian, false},
      {"fmnist_mlp", {784, 512, 256, 10}, {784, 4, 256, 10}, Activation::ReLU,
       Activation::Identity, InitScheme::Gaussian, false},
      {"autoencoder", {784, 512, 512, 512, 784}, {784, 10, 256, 10, 784}, Activation::ReLU,
       Activation::Sigmoid, InitScheme::Orthogonal, true},
  };
  return registry;
}

inline const ArchitectureDescriptor& find_architecture(std::string_view name) {
  for (const auto& a : architecture_registry())
    if (a.name == name) return a;
  throw Error("unknown architecture '" + std::string(name) + "'");
}

/// Seed of the projection (PRP) or weights (dense) of layer `index`.
inline std::uint64_t layer_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, index);
}

/// Plain feed-forward stack over `widths`: hidden activation between layers,
/// `output` after the last.
inline Sequential build_mlp(const std::vector<std::size_t>& widths, bool prp_layers,
                            std::uint64_t master_seed, Activation hidden, Activation output,
                            InitScheme scheme = InitScheme::Gaussian) {
  if (widths.size() < 2) throw DimensionError("build_mlp: need at least input and output widths");
  Sequential model;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const std::size_t in = widths[k];
    const std::size_t out = widths[k + 1];
    if (in == 0 || out == 0) throw DimensionError("build_mlp: zero width");
    const std::uint64_t seed = layer_seed(master_seed, k);
    Layer layer = prp_layers
                      ? Layer(PRPLayer(regenerate(scheme, seed, in, out),
                                       init_modulation(in, out, seed)))
                      : Layer(DenseLayer::uniform_init(in, out, seed));
    model.add(std::move(layer), k + 2 == widths.size() ? output : hidden);
  }
  return model;
}

/// Symmetric PRP autoencoder: encoder projections P_1..P_m are drawn from
/// `scheme` (orthogonal by default), decoder stage m+j uses the transpose view
/// of encoder projection m-1-j. `widths` must be a palindrome such as
/// 784, 512, 512, 512, 784.
inline Sequential build_tied_prp_autoencoder(const std::vector<std::size_t>& widths,
                                             std::uint64_t master_seed, Activation hidden,
                                             Activation output,
                                             InitScheme scheme = InitScheme::Orthogonal) {
  const std::size_t layers = widths.size() - 1;
  if (widths.size() < 3 || layers % 2 != 0) {
    throw DimensionError("tied autoencoder needs an even number of layers");
  }
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (widths[k] != widths[widths.size() - 1 - k]) {
      throw DimensionError("tied autoencoder widths must be symmetric");
    }
  }
  const std::size_t half = layers / 2;
  Sequential model;
  std::vector<ProjectionMatrix> encoder;
  for (std::size_t k = 0; k < half; ++k) {
    const std::uint64_t seed = layer_seed(master_seed, k);
    encoder.push_back(regenerate(scheme, seed, widths[k], widths[k + 1]));
    model.add(PRPLayer(encoder.back(), init_modulation(widths[k], widths[k + 1], seed)), hidden);
  }
  for (std::size_t j = 0; j < half; ++j) {
    const std::size_t mirror = half - 1 - j;
    ProjectionMatrix view = encoder[mirror].transposed_view();
    const std::size_t in = view.d_in();
    const std::size_t out = view.d_out();
    model.add(PRPLayer(std::move(view), init_modulation(in, out, 0)),
              j + 1 == half ? output : hidden, mirror);
  }
  return model;
}

/// Builds a registered architecture. PRP replaces every trainable linear
/// layer; LowRankDense uses the registry's bottleneck widths.
inline Sequential build_architecture(const ArchitectureDescriptor& arch, ModelKind kind,
                                     std::uint64_t master_seed,
                                     std::optional<InitScheme> scheme_override = {}) {
  const InitScheme scheme = scheme_override.value_or(arch.projection_scheme);
  switch (kind) {
    case ModelKind::Prp:
      if (arch.tied_autoencoder) {
        return build_tied_prp_autoencoder(arch.widths, master_seed, arch.hidden, arch.output,
                                          scheme);
      }
      return build_mlp(arch.widths, true, master_seed, arch.hidden, arch.output, scheme);
    case ModelKind::Dense:
      return build_mlp(arch.widths, false, master_seed, arch.hidden, arch.output);
    case ModelKind::LowRankDense:
      if (arch.lowrank_widths.empty()) {
        throw Error("architecture '" + arch.name + "' has no low-rank baseline");
      }
      return build_mlp(arch.lowrank_widths, false, master_seed, arch.hidden, arch.output);
  }
  throw Error("build_architecture: unknown model kind");
}

inline Sequential build_architecture(std::string_view name, ModelKind kind,
                                     std::uint64_t master_seed,
                                     std::optional<InitScheme> scheme_override = {}) {
  return build_architecture(find_architecture(name), kind, master_seed, scheme_override);
}

/// The MNIST autoencoder: PRP is tied 784-512-512-512-784, Dense is the untied
/// mirror, LowRankDense is 784-10-256-10-784. Sigmoid output, ReLU elsewhere.
inline Sequential build_tied_autoencoder(ModelKind kind, std::uint64_t master_seed) {
  return build_architecture("autoencoder", kind, master_seed);
}

/// True when every tied stage's projection is the transpose view of the
/// stage it names, sharing that stage's storage.
inline bool projections_tied(const Sequential& model) {
  for (std::size_t k = 0; k < model.size(); ++k) {
    const auto& st = model.stage(k);
    if (!st.tied_to) continue;
    const auto* dec = std::get_if<PRPLayer>(&st.layer);
    const auto* enc = std::get_if<PRPLayer>(&model.stage(*st.tied_to).layer);
    if (dec == nullptr || enc == nullptr) return false;
    if (!dec->projection().shares_storage_with(enc->projection())) return false;
    if (dec->projection().transposed() == enc->projection().transposed()) return false;
  }
  return true;
}

/// Checksums of every stage's projection storage (0 for dense stages).
inline std::vector<std::uint64_t> projection_checksums(const Sequential& model) {
  std::vector<std::uint64_t> out;
  for (const auto& st : model.stages()) {
    const auto* l = std::get_if<PRPLayer>(&st.layer);
    out.push_back(l ? matrix_checksum(l->projection().stored()) : 0);
  }
  return out;
}

}  // namespace prp
