#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lanatt/model/config.hpp"
#include "lanatt/numerics/tensor.hpp"

namespace lanatt::model {

using numerics::Shape;
using numerics::Tensor;

/// Named parameter tensors in a fixed registration order.
class ModelParams {
 public:
  void add(std::string name, Tensor value) {
    for (const auto& n : names_)
      if (n == name) throw DomainError("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw DomainError("unknown parameter '" + std::string(name) + "'");
  }

  const Tensor& at(std::string_view name) const { return tensors_[index_of(name)]; }
  Tensor& at(std::string_view name) { return tensors_[index_of(name)]; }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::vector<Tensor>& tensors() noexcept { return tensors_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
  }

  /// Same names and shapes, all zeros.
  ModelParams zeros_like() const {
    ModelParams z;
    for (std::size_t i = 0; i < size(); ++i) z.add(names_[i], Tensor::zeros_like(tensors_[i]));
    return z;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// Shapes of one MLP block: hidden = relu(w1 x + b1); out = w2 hidden + b2.
struct MlpShape {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;
};

/// Shapes of one LSTM block. Gate rows are stacked as (forget, input, output, candidate).
struct LstmShape {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;
};

struct Layout {
  std::vector<MlpShape> mlps;
  std::vector<LstmShape> lstms;
};

inline Layout layout(const ModelConfig& c) {
  Layout l;
  l.mlps = {{"vv_embed", 2, c.embed_dim, c.embed_dim},
            {"ss_embed", 2, c.embed_dim, c.embed_dim},
            {"cur_mlp", 2, c.lane_enc_dim, c.lane_enc_dim},
            {"fut_mlp", 2 * c.lane_shape_k, c.lane_enc_dim, c.lane_enc_dim},
            {"score_mlp", 2 * c.lane_enc_dim, c.score_hidden, 1},
            {"head_mlp", c.overall_hidden, c.head_hidden, 5}};
  l.lstms = {{"vv_lstm", c.embed_dim, c.lstm_hidden},
             {"ss_lstm", c.embed_dim, c.lane_enc_dim},
             {"overall_lstm", c.overall_input(), c.overall_hidden}};
  return l;
}

/// Shapes only, every tensor zero.
inline ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  const Layout l = layout(c);
  for (const MlpShape& m : l.mlps) {
    p.add(m.name + ".w1", Tensor(Shape{m.hidden, m.in}));
    p.add(m.name + ".b1", Tensor(Shape{m.hidden}));
    p.add(m.name + ".w2", Tensor(Shape{m.out, m.hidden}));
    p.add(m.name + ".b2", Tensor(Shape{m.out}));
  }
  for (const LstmShape& s : l.lstms) {
    p.add(s.name + ".w", Tensor(Shape{4 * s.hidden, s.in}));
    p.add(s.name + ".u", Tensor(Shape{4 * s.hidden, s.hidden}));
    p.add(s.name + ".b", Tensor(Shape{4 * s.hidden}));
  }
  return p;
}

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias +1.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.names()[i];
    Tensor& t = p.tensors()[i];
    if (t.rank() == 2) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.data()) v = u(rng);
    } else if (name.ends_with("_lstm.b")) {
      const std::size_t h = t.size() / 4;
      for (std::size_t k = 0; k < h; ++k) t[k] = 1.0;
    }
  }
  return p;
}

}  // namespace lanatt::model
