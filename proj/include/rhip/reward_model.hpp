#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/io.hpp"
#include "rhip/random.hpp"

namespace rhip {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Log-domain reward per edge id. Padding slots have no edge id; `slot()`
/// reports them as -inf.
struct RewardTable {
  std::vector<double> values;

  double operator[](EdgeId e) const { return values[e]; }
  double slot(const Slot& s) const { return s.valid() ? values[s.edge] : kNegInf; }
  std::size_t size() const { return values.size(); }

  RewardTable scaled(double factor) const {
    RewardTable out = *this;
    if (factor != 1.0) {
      for (double& v : out.values) v *= factor;
    }
    return out;
  }

  friend bool operator==(const RewardTable&, const RewardTable&) = default;
};

inline std::string format_reward_table(const RewardTable& r) {
  std::string out;
  for (std::size_t e = 0; e < r.values.size(); ++e) {
    out += std::to_string(e) + ' ' + format_double(r.values[e]) + '\n';
  }
  return out;
}

inline RewardTable parse_reward_table(const std::string& text) {
  RewardTable r;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string where = "reward table line " + std::to_string(lineno);
    if (tok.size() != 2) throw ValidationError(where + ": expected `<edge_id> <reward>`");
    const auto id = static_cast<std::size_t>(detail::parse_id(tok[0], where));
    if (id != r.values.size()) throw ValidationError(where + ": edge ids must be dense and ordered");
    const double v = detail::parse_real(tok[1], where);
    if (!(v <= 0.0)) throw ValidationError(where + ": reward must be <= 0");
    r.values.push_back(v);
  }
  return r;
}

enum class ModelKind { Linear, DenseNet, SparsePerEdge, Composite };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Linear: return "linear";
    case ModelKind::DenseNet: return "dense";
    case ModelKind::SparsePerEdge: return "sparse";
    case ModelKind::Composite: return "composite";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "linear") return ModelKind::Linear;
  if (s == "dense") return ModelKind::DenseNet;
  if (s == "sparse") return ModelKind::SparsePerEdge;
  if (s == "composite") return ModelKind::Composite;
  throw ValidationError("unknown model kind '" + s + "'");
}

struct DenseArch {
  int width = 18;
  int depth = 2;
  friend bool operator==(const DenseArch&, const DenseArch&) = default;
};

/// Parameterized edge reward r_theta(e) <= 0.
///
/// - Linear: r = theta . f, with theta <= 0 (features are nonnegative).
/// - DenseNet: tanh MLP with scalar output z and head r = -softplus(z).
/// - SparsePerEdge: r = baseline_e + theta_e, one parameter per
///   non-connector edge.
/// - Composite: sum of its parts.
///
/// Connector edges bypass the model and always score 0.
class RewardModel {
 public:
  static RewardModel linear(std::vector<double> theta) {
    RewardModel m;
    m.kind_ = ModelKind::Linear;
    m.feature_dim_ = static_cast<int>(theta.size());
    m.params_ = std::move(theta);
    return m;
  }

  static RewardModel dense(int feature_dim, DenseArch arch, std::uint64_t seed) {
    if (feature_dim < 1 || arch.width < 1 || arch.depth < 1) {
      throw ValidationError("dense model needs positive feature dim, width and depth");
    }
    RewardModel m;
    m.kind_ = ModelKind::DenseNet;
    m.feature_dim_ = feature_dim;
    m.arch_ = arch;
    m.params_.assign(dense_param_count(feature_dim, arch), 0.0);
    Rng rng(seed);
    std::size_t p = 0;
    int fan_in = feature_dim;
    for (int layer = 0; layer < arch.depth; ++layer) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (int i = 0; i < arch.width * fan_in; ++i) m.params_[p++] = rng.uniform(-scale, scale);
      p += arch.width;  // biases start at 0
      fan_in = arch.width;
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < fan_in; ++i) m.params_[p++] = rng.uniform(-scale, scale);
    // Output bias: softplus(1) ~ 1.31, a moderate starting cost.
    m.params_[p++] = 1.0;
    return m;
  }

  /// `baseline` is a per-edge reward table (<= 0) the model is anchored to;
  /// with all parameters at 0 the model reproduces it exactly.
  static RewardModel sparse(const RoadGraph& g, const RewardTable& baseline, double l1_coeff) {
    if (baseline.size() != static_cast<std::size_t>(g.num_edges())) {
      throw ValidationError("baseline table has " + std::to_string(baseline.size()) + " entries, graph has " +
                            std::to_string(g.num_edges()) + " edges");
    }
    if (l1_coeff < 0) throw ValidationError("l1_coeff must be nonnegative");
    RewardModel m;
    m.kind_ = ModelKind::SparsePerEdge;
    m.feature_dim_ = g.feature_dim();
    m.l1_coeff_ = l1_coeff;
    m.edge_param_.assign(g.num_edges(), -1);
    m.baseline_.assign(g.num_edges(), 0.0);
    int next = 0;
    for (EdgeId e = 0; e < g.num_edges(); ++e) {
      if (g.is_connector(e)) continue;
      if (!(baseline[e] <= 0.0)) throw ValidationError("baseline reward must be finite and <= 0");
      m.edge_param_[e] = next++;
      m.baseline_[e] = baseline[e];
    }
    m.params_.assign(next, 0.0);
    return m;
  }

  static RewardModel sparse(const RoadGraph& g, double l1_coeff) {
    return sparse(g, RewardTable{std::vector<double>(g.num_edges(), 0.0)}, l1_coeff);
  }

  static RewardModel composite(std::vector<RewardModel> parts) {
    if (parts.empty()) throw ValidationError("composite model needs at least one part");
    RewardModel m;
    m.kind_ = ModelKind::Composite;
    m.feature_dim_ = parts.front().feature_dim_;
    for (const auto& p : parts) {
      if (p.kind_ == ModelKind::Composite) throw ValidationError("nested composite models are not supported");
      if (p.feature_dim_ != m.feature_dim_) throw ValidationError("composite parts disagree on feature dim");
    }
    m.parts_ = std::move(parts);
    return m;
  }

  ModelKind kind() const { return kind_; }
  int feature_dim() const { return feature_dim_; }
  const DenseArch& arch() const { return arch_; }
  double l1_coeff() const { return l1_coeff_; }
  const std::vector<RewardModel>& parts() const { return parts_; }
  const std::vector<double>& baseline() const { return baseline_; }
  const std::vector<int>& edge_param() const { return edge_param_; }

  /// Temperature the model was trained at; carried in checkpoints only.
  double temperature = 1.0;

  std::size_t num_params() const {
    if (kind_ != ModelKind::Composite) return params_.size();
    std::size_t n = 0;
    for (const auto& p : parts_) n += p.num_params();
    return n;
  }

  std::vector<double> params() const {
    if (kind_ != ModelKind::Composite) return params_;
    std::vector<double> out;
    for (const auto& p : parts_) {
      const auto& pp = p.params_;
      out.insert(out.end(), pp.begin(), pp.end());
    }
    return out;
  }

  void set_params(std::span<const double> flat) {
    if (flat.size() != num_params()) {
      throw ValidationError("parameter vector has " + std::to_string(flat.size()) + " entries, model expects " +
                            std::to_string(num_params()));
    }
    if (kind_ != ModelKind::Composite) {
      params_.assign(flat.begin(), flat.end());
      return;
    }
    std::size_t off = 0;
    for (auto& p : parts_) {
      p.params_.assign(flat.begin() + off, flat.begin() + off + p.params_.size());
      off += p.params_.size();
    }
  }

  /// Throws ValidationError if the model cannot score this graph.
  void check_compatible(const RoadGraph& g) const {
    if (kind_ == ModelKind::Composite) {
      for (const auto& p : parts_) p.check_compatible(g);
      return;
    }
    if (kind_ == ModelKind::SparsePerEdge) {
      if (edge_param_.size() != static_cast<std::size_t>(g.num_edges())) {
        throw ValidationError("sparse model covers " + std::to_string(edge_param_.size()) +
                              " edges, graph has " + std::to_string(g.num_edges()));
      }
      for (EdgeId e = 0; e < g.num_edges(); ++e) {
        if ((edge_param_[e] < 0) != g.is_connector(e)) {
          throw ValidationError("sparse model connector layout does not match graph");
        }
      }
      return;
    }
    if (g.num_edges() > 0 && feature_dim_ != g.feature_dim()) {
      throw ValidationError("model expects " + std::to_string(feature_dim_) + " features, graph has " +
                            std::to_string(g.feature_dim()));
    }
  }

  double edge_reward(const RoadGraph& g, EdgeId e) const {
    if (g.is_connector(e)) return 0.0;
    switch (kind_) {
      case ModelKind::Linear: {
        const auto f = g.features(e);
        double r = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) r += params_[i] * f[i];
        return r;
      }
      case ModelKind::DenseNet: return -softplus(dense_forward(g.features(e), nullptr));
      case ModelKind::SparsePerEdge: return baseline_[e] + params_[edge_param_[e]];
      case ModelKind::Composite: {
        double r = 0.0;
        for (const auto& p : parts_) r += p.edge_reward(g, e);
        return r;
      }
    }
    return 0.0;
  }

  /// grad += weight * d r(e) / d theta.
  void accumulate_edge_gradient(const RoadGraph& g, EdgeId e, double weight, std::span<double> grad) const {
    if (weight == 0.0 || g.is_connector(e)) return;
    switch (kind_) {
      case ModelKind::Linear: {
        const auto f = g.features(e);
        for (std::size_t i = 0; i < f.size(); ++i) grad[i] += weight * f[i];
        return;
      }
      case ModelKind::DenseNet: {
        std::vector<double> acts;
        const double z = dense_forward(g.features(e), &acts);
        // d(-softplus(z))/dz = -sigmoid(z)
        dense_backward(g.features(e), acts, -weight * sigmoid(z), grad);
        return;
      }
      case ModelKind::SparsePerEdge: grad[edge_param_[e]] += weight; return;
      case ModelKind::Composite: {
        std::size_t off = 0;
        for (const auto& p : parts_) {
          p.accumulate_edge_gradient(g, e, weight, grad.subspan(off, p.num_params()));
          off += p.num_params();
        }
        return;
      }
    }
  }

  /// L1 subgradient on per-edge parameters: l1 * sign(theta).
  void accumulate_regularizer_gradient(std::span<double> grad) const {
    if (kind_ == ModelKind::SparsePerEdge) {
      if (l1_coeff_ == 0.0) return;
      for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i] > 0) grad[i] += l1_coeff_;
        else if (params_[i] < 0) grad[i] -= l1_coeff_;
      }
    } else if (kind_ == ModelKind::Composite) {
      std::size_t off = 0;
      for (const auto& p : parts_) {
        p.accumulate_regularizer_gradient(grad.subspan(off, p.num_params()));
        off += p.num_params();
      }
    }
  }

  double regularizer() const {
    if (kind_ == ModelKind::SparsePerEdge) {
      double s = 0.0;
      for (double p : params_) s += std::abs(p);
      return l1_coeff_ * s;
    }
    double s = 0.0;
    for (const auto& p : parts_) s += p.regularizer();
    return s;
  }

  void project_nonpositive() {
    switch (kind_) {
      case ModelKind::Linear:
        for (double& p : params_) p = std::min(p, 0.0);
        return;
      case ModelKind::DenseNet: return;  // the head already maps into (-inf, 0)
      case ModelKind::SparsePerEdge:
        for (std::size_t e = 0; e < edge_param_.size(); ++e) {
          if (edge_param_[e] < 0) continue;
          double& p = params_[edge_param_[e]];
          p = std::min(p, -baseline_[e]);
        }
        return;
      case ModelKind::Composite:
        for (auto& p : parts_) p.project_nonpositive();
        return;
    }
  }

  friend bool operator==(const RewardModel&, const RewardModel&) = default;

  static std::size_t dense_param_count(int feature_dim, DenseArch arch) {
    std::size_t n = 0;
    int fan_in = feature_dim;
    for (int layer = 0; layer < arch.depth; ++layer) {
      n += static_cast<std::size_t>(arch.width) * fan_in + arch.width;
      fan_in = arch.width;
    }
    return n + fan_in + 1;
  }

 private:
  friend RewardModel parse_model(const std::string& text);
  friend std::string format_model(const RewardModel& m);

  static double softplus(double z) { return z > 30 ? z : std::log1p(std::exp(z)); }
  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

  // Returns the pre-head scalar; stores hidden activations layer by layer.
  double dense_forward(std::span<const double> x, std::vector<double>* acts) const {
    const int w = arch_.width;
    std::vector<double> in(x.begin(), x.end());
    std::vector<double> out(w);
    std::size_t p = 0;
    for (int layer = 0; layer < arch_.depth; ++layer) {
      const std::size_t fan_in = in.size();
      const std::size_t bias = p + static_cast<std::size_t>(w) * fan_in;
      for (int j = 0; j < w; ++j) {
        double s = params_[bias + j];
        for (std::size_t i = 0; i < fan_in; ++i) s += params_[p + j * fan_in + i] * in[i];
        out[j] = std::tanh(s);
      }
      p = bias + w;
      if (acts) acts->insert(acts->end(), out.begin(), out.end());
      in = out;
    }
    double z = params_[p + w];
    for (int i = 0; i < w; ++i) z += params_[p + i] * in[i];
    return z;
  }

  void dense_backward(std::span<const double> x, const std::vector<double>& acts, double dz,
                      std::span<double> grad) const {
    const int w = arch_.width;
    const int depth = arch_.depth;
    std::vector<std::size_t> offset(depth + 1);
    std::size_t p = 0;
    std::size_t fan_in = x.size();
    for (int layer = 0; layer < depth; ++layer) {
      offset[layer] = p;
      p += static_cast<std::size_t>(w) * fan_in + w;
      fan_in = w;
    }
    offset[depth] = p;

    const double* last = acts.data() + static_cast<std::size_t>(depth - 1) * w;
    std::vector<double> delta(w);
    for (int i = 0; i < w; ++i) {
      grad[p + i] += dz * last[i];
      delta[i] = dz * params_[p + i];
    }
    grad[p + w] += dz;

    for (int layer = depth - 1; layer >= 0; --layer) {
      const double* a = acts.data() + static_cast<std::size_t>(layer) * w;
      const std::size_t in_dim = layer == 0 ? x.size() : static_cast<std::size_t>(w);
      const double* in = layer == 0 ? x.data() : acts.data() + static_cast<std::size_t>(layer - 1) * w;
      const std::size_t base = offset[layer];
      const std::size_t bias = base + static_cast<std::size_t>(w) * in_dim;
      std::vector<double> dpre(w);
      for (int j = 0; j < w; ++j) dpre[j] = delta[j] * (1.0 - a[j] * a[j]);
      std::vector<double> next(in_dim, 0.0);
      for (int j = 0; j < w; ++j) {
        grad[bias + j] += dpre[j];
        for (std::size_t i = 0; i < in_dim; ++i) {
          grad[base + j * in_dim + i] += dpre[j] * in[i];
          next[i] += dpre[j] * params_[base + j * in_dim + i];
        }
      }
      delta = std::move(next);
    }
  }

  ModelKind kind_ = ModelKind::Linear;
  int feature_dim_ = 0;
  DenseArch arch_;
  double l1_coeff_ = 0.0;
  std::vector<double> params_;
  std::vector<RewardModel> parts_;
  std::vector<double> baseline_;
  std::vector<int> edge_param_;
};

inline RewardTable edge_rewards(const RewardModel& model, const RoadGraph& g) {
  model.check_compatible(g);
  RewardTable r;
  r.values.resize(g.num_edges());
  for (EdgeId e = 0; e < g.num_edges(); ++e) r.values[e] = model.edge_reward(g, e);
  return r;
}

/// Gradient of sum_e weights[e] * r(e) plus the model's L1 term.
inline std::vector<double> backprop(const RewardModel& model, const RoadGraph& g, std::span<const double> weights) {
  if (weights.size() != static_cast<std::size_t>(g.num_edges())) {
    throw ValidationError("residual has " + std::to_string(weights.size()) + " entries, graph has " +
                          std::to_string(g.num_edges()) + " edges");
  }
  std::vector<double> grad(model.num_params(), 0.0);
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    if (!std::isfinite(weights[e])) throw ValidationError("non-finite residual on edge " + std::to_string(e));
    model.accumulate_edge_gradient(g, e, weights[e], grad);
  }
  model.accumulate_regularizer_gradient(grad);
  return grad;
}

inline RewardModel project_nonpositive(RewardModel model) {
  model.project_nonpositive();
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint format (text, versioned):
//   rhip-model 1
//   kind <kind> dims <d> l1_coeff <x> temperature <t>
//   [arch <width> <depth>]            dense only
//   [edges <E>] + E lines `<param_index> <baseline>`   sparse only
//   params <n> followed by n values
//   [parts <k>] + k nested bodies      composite only

inline std::string format_model(const RewardModel& m) {
  std::ostringstream out;
  auto body = [&](const RewardModel& part, auto&& self) -> void {
    out << "kind " << to_string(part.kind_) << " dims " << part.feature_dim_ << " l1_coeff "
        << format_double(part.l1_coeff_) << " temperature " << format_double(part.temperature) << '\n';
    if (part.kind_ == ModelKind::DenseNet) out << "arch " << part.arch_.width << ' ' << part.arch_.depth << '\n';
    if (part.kind_ == ModelKind::SparsePerEdge) {
      out << "edges " << part.edge_param_.size() << '\n';
      for (std::size_t e = 0; e < part.edge_param_.size(); ++e) {
        out << part.edge_param_[e] << ' ' << format_double(part.baseline_[e]) << '\n';
      }
    }
    if (part.kind_ == ModelKind::Composite) {
      out << "parts " << part.parts_.size() << '\n';
      for (const auto& p : part.parts_) self(p, self);
      return;
    }
    out << "params " << part.params_.size() << '\n';
    for (std::size_t i = 0; i < part.params_.size(); ++i) {
      out << format_double(part.params_[i]) << (i + 1 == part.params_.size() ? "" : " ");
    }
    out << '\n';
  };
  out << "rhip-model 1\n";
  body(m, body);
  return out.str();
}

inline RewardModel parse_model(const std::string& text) {
  std::istringstream in(text);
  auto word = [&](const char* expect) {
    std::string w;
    if (!(in >> w) || (expect && w != expect)) {
      throw ValidationError(std::string("checkpoint: expected '") + (expect ? expect : "value") + "', got '" + w + "'");
    }
    return w;
  };
  auto number = [&] { return detail::parse_real(word(nullptr), "checkpoint"); };
  auto count = [&] { return static_cast<std::size_t>(detail::parse_id(word(nullptr), "checkpoint")); };

  word("rhip-model");
  if (count() != 1) throw ValidationError("checkpoint: unsupported version");
  auto body = [&](auto&& self) -> RewardModel {
    RewardModel m;
    word("kind");
    m.kind_ = parse_model_kind(word(nullptr));
    word("dims");
    m.feature_dim_ = static_cast<int>(count());
    word("l1_coeff");
    m.l1_coeff_ = number();
    word("temperature");
    m.temperature = number();
    if (m.kind_ == ModelKind::DenseNet) {
      word("arch");
      m.arch_.width = static_cast<int>(count());
      m.arch_.depth = static_cast<int>(count());
    }
    if (m.kind_ == ModelKind::SparsePerEdge) {
      word("edges");
      const std::size_t e = count();
      m.edge_param_.resize(e);
      m.baseline_.resize(e);
      for (std::size_t i = 0; i < e; ++i) {
        const std::string idx = word(nullptr);
        m.edge_param_[i] = idx == "-1" ? -1 : static_cast<int>(detail::parse_id(idx, "checkpoint"));
        m.baseline_[i] = number();
      }
    }
    if (m.kind_ == ModelKind::Composite) {
      word("parts");
      const std::size_t k = count();
      for (std::size_t i = 0; i < k; ++i) m.parts_.push_back(self(self));
      return m;
    }
    word("params");
    const std::size_t n = count();
    m.params_.resize(n);
    for (auto& p : m.params_) p = number();
    if (m.kind_ == ModelKind::Linear && n != static_cast<std::size_t>(m.feature_dim_)) {
      throw ValidationError("checkpoint: linear model parameter count mismatch");
    }
    if (m.kind_ == ModelKind::DenseNet && n != RewardModel::dense_param_count(m.feature_dim_, m.arch_)) {
      throw ValidationError("checkpoint: dense model parameter count mismatch");
    }
    return m;
  };
  return body(body);
}

inline void save_model(const RewardModel& m, const std::string& path) { detail::write_file(path, format_model(m)); }
inline RewardModel load_model(const std::string& path) { return parse_model(detail::read_file(path)); }

}  // namespace rhip
