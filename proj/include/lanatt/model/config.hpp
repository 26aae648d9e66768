#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "lanatt/errors.hpp"

namespace lanatt::model {

/// How per-lane encodings are reduced to the fixed-size a^t.
enum class Aggregator { kAttention, kPooling, kSingleLane, kNone };

inline std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::kAttention: return "attention";
    case Aggregator::kPooling: return "pooling";
    case Aggregator::kSingleLane: return "single-lane";
    case Aggregator::kNone: return "none";
  }
  return "unknown";
}

inline Aggregator parse_aggregator(std::string_view s) {
  if (s == "attention") return Aggregator::kAttention;
  if (s == "pooling") return Aggregator::kPooling;
  if (s == "single-lane" || s == "single_lane") return Aggregator::kSingleLane;
  if (s == "none" || s == "lstm") return Aggregator::kNone;
  throw DomainError("unknown aggregator '" + std::string(s) + "'");
}

/// Display name used in comparison tables.
inline std::string model_name(Aggregator a) {
  switch (a) {
    case Aggregator::kAttention: return "lane-attention";
    case Aggregator::kPooling: return "lane-pooling";
    case Aggregator::kSingleLane: return "single-lane";
    case Aggregator::kNone: return "lstm";
  }
  return "unknown";
}

struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t lstm_hidden = 64;
  std::size_t lane_enc_dim = 64;
  std::size_t agg_dim = 192;
  std::size_t overall_hidden = 256;
  std::size_t lane_shape_k = 10;
  double lane_shape_spacing = 2.0;
  // Hidden widths of the scalar-score and 5-way output MLPs.
  std::size_t score_hidden = 64;
  std::size_t head_hidden = 64;
  Aggregator aggregator = Aggregator::kAttention;
  std::size_t pred_steps = 30;

  std::size_t overall_input() const { return agg_dim + lstm_hidden; }

  void validate() const {
    if (agg_dim != 3 * lane_enc_dim) throw DomainError("model config: agg_dim must equal 3 * lane_enc_dim");
    if (embed_dim == 0 || lstm_hidden == 0 || lane_enc_dim == 0 || overall_hidden == 0 || lane_shape_k == 0 ||
        score_hidden == 0 || head_hidden == 0)
      throw DomainError("model config: dimensions must be positive");
    if (!(lane_shape_spacing > 0.0)) throw DomainError("model config: lane_shape_spacing must be positive");
    if (pred_steps == 0) throw DomainError("model config: pred_steps must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"lstm_hidden", c.lstm_hidden},
          {"lane_enc_dim", c.lane_enc_dim},
          {"agg_dim", c.agg_dim},
          {"overall_hidden", c.overall_hidden},
          {"lane_shape_k", c.lane_shape_k},
          {"lane_shape_spacing", c.lane_shape_spacing},
          {"score_hidden", c.score_hidden},
          {"head_hidden", c.head_hidden},
          {"aggregator", to_string(c.aggregator)},
          {"pred_steps", c.pred_steps}};
}

/// Missing keys keep their defaults.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
    c.lane_enc_dim = j.value("lane_enc_dim", c.lane_enc_dim);
    c.agg_dim = j.value("agg_dim", 3 * c.lane_enc_dim);
    c.overall_hidden = j.value("overall_hidden", c.overall_hidden);
    c.lane_shape_k = j.value("lane_shape_k", c.lane_shape_k);
    c.lane_shape_spacing = j.value("lane_shape_spacing", c.lane_shape_spacing);
    c.score_hidden = j.value("score_hidden", c.score_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.aggregator = parse_aggregator(j.value("aggregator", to_string(c.aggregator)));
    c.pred_steps = j.value("pred_steps", c.pred_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace lanatt::model
