#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "skelmae/masking.hpp"
#include "skelmae/rng.hpp"
#include "skelmae/skeleton.hpp"
#include "skelmae/tensor.hpp"

namespace skelmae {

/// Per-block dimensions of one attention block: token width in/out and the
/// total query/key/value width (split across heads).
struct BlockConfig {
  int d_in = 0;
  int d_out = 0;
  int d_qkv = 0;
  int n_heads = 4;
};

/// Full network configuration. Encoder = input layer (input_dim -> first
/// block width) + attention blocks; decoder = attention blocks + output
/// layer (last block width -> input_dim). Consecutive blocks must chain.
struct ModelConfig {
  std::string name = "custom";
  int input_dim = 3;
  int embed_dim = 256;
  std::vector<BlockConfig> encoder_blocks;
  std::vector<BlockConfig> decoder_blocks;
  int tuple_len = 2;   // frames per attention tuple
  int max_frames = 20;
  int max_joints = 25;
  int ffn_mult = 4;    // feedforward hidden width multiplier

  int encoder_width() const { return encoder_blocks.front().d_in; }
  int encoder_out_width() const { return encoder_blocks.back().d_out; }
  int decoder_width() const { return decoder_blocks.front().d_in; }
  int decoder_out_width() const { return decoder_blocks.back().d_out; }

  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  /// Named presets: dim256-depth9, dim512-depth9, dim128-depth9,
  /// dim256-depth5, dim256-depth7, dim256-depth11, plus the desk-scale
  /// `tiny` configuration used by tests and sweeps.
  static ModelConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

/// Sine-cosine encoding of the flattened grid position p = frame * max_joints
/// + joint: channel 2k = sin(p / 10000^(2k/d)), channel 2k+1 = cos(...).
/// Uses original indices, so masked and visible tokens share one coordinate
/// system. d_model must be even.
std::vector<double> positional_encoding(int frame_idx, int joint_idx, int max_joints, int d_model,
                                        int max_frames = -1);

/// Grouping of a frame-major token grid into non-overlapping tuples of
/// tuple_len frames. When the frame count does not divide, the last tuple is
/// completed by repeating the final frame; pad rows are dropped again after
/// the block stack and never reach the loss.
struct TuplePlan {
  int n_tuples = 0;
  int frames_per_tuple = 0;
  int tokens_per_frame = 0;
  int real_tokens = 0;
  int padded_tokens = 0;
  std::vector<int64_t> gather;  // padded token row -> source token row

  bool padded() const { return padded_tokens != real_tokens; }
  int tokens_per_tuple() const { return frames_per_tuple * tokens_per_frame; }
};

TuplePlan plan_tuples(int n_frames, int tokens_per_frame, int tuple_len);

/// Ordered, named parameter registry. Iteration order is construction order,
/// which fixes optimizer-state alignment and checkpoint layout.
class ParamStore {
 public:
  enum class Init { kTruncNormal, kZeros, kOnes };

  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  const Tensor* find(const std::string& name) const;
  int64_t total_size() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct LinearParams {
  Tensor weight, bias;
};

struct SttaBlockParams {
  BlockConfig cfg;
  LinearParams query, key, value, out;
  std::optional<LinearParams> residual_proj;  // present when d_in != d_out
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  LinearParams ffn_in, ffn_out;
};

/// One attention block over tupled tokens x: (n_tuples, tokens_per_tuple,
/// d_in) -> (..., d_out). Multi-head self-attention within each tuple, then a
/// position-wise feedforward; residual + layer norm around both sublayers.
Tensor stta_forward(const Tensor& x, const SttaBlockParams& p);

/// Serialized model state: config, optional classifier head size, and the
/// named parameter tensors. On disk: manifest.json (names, shapes, byte
/// offsets) + params.bin (flat little-endian 64-bit reals).
struct Checkpoint {
  ModelConfig model_cfg;
  std::optional<int> n_classes;
  std::vector<std::pair<std::string, Tensor>> tensors;

  static Checkpoint snapshot(const ModelConfig& cfg, const ParamStore& params,
                             std::optional<int> n_classes = std::nullopt);
  const Tensor* find(const std::string& name) const;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

/// Masked autoencoder: encoder over visible tokens only, decoder over the
/// full grid with a shared learned token standing in at masked positions.
class SkeletonMae {
 public:
  SkeletonMae(ModelConfig cfg, uint64_t seed);

  /// Visible tokens -> latent tokens, one per visible (frame, joint).
  Tensor encode(const MaskedSequence& input) const;
  /// Latent tokens + plan -> reconstructed (T, J, D) tensor.
  Tensor decode(const Tensor& latent, const MaskPlan& plan) const;
  Tensor reconstruct(const MaskedSequence& input) const;

  int64_t param_count() const;
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  Checkpoint checkpoint() const;
  void load(const Checkpoint& ckpt);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  LinearParams input_layer_;
  std::vector<SttaBlockParams> encoder_;
  Tensor mask_token_;
  std::optional<LinearParams> latent_adapter_;  // encoder out -> decoder in, when widths differ
  std::vector<SttaBlockParams> decoder_;
  LinearParams output_layer_;
};

/// Fine-tuning model: the encoder, mean pooling over all tokens, and a single
/// linear head. Never applies masking.
class ActionClassifier {
 public:
  ActionClassifier(ModelConfig cfg, int n_classes, uint64_t seed);

  Tensor logits(const SkeletonSequence& seq) const;  // shape (n_classes)

  int n_classes() const { return n_classes_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  Checkpoint checkpoint() const;
  void load(const Checkpoint& ckpt);
  /// Copies encoder.* tensors from a pretraining checkpoint, shape-verified.
  void load_encoder(const Checkpoint& pretrain_ckpt);

 private:
  ModelConfig cfg_;
  int n_classes_;
  ParamStore params_;
  LinearParams input_layer_;
  std::vector<SttaBlockParams> encoder_;
  LinearParams head_;
};

}  // namespace skelmae
