#include "skelmae/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace skelmae {

using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be positive");
  if (encoder_blocks.empty() || decoder_blocks.empty())
    throw std::invalid_argument("ModelConfig: encoder and decoder need at least one block");
  if (tuple_len < 1) throw std::invalid_argument("ModelConfig: tuple_len must be >= 1");
  if (max_frames < 1 || max_joints < 1)
    throw std::invalid_argument("ModelConfig: max_frames / max_joints must be positive");
  auto check_chain = [](const std::vector<BlockConfig>& blocks, const char* which) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      if (b.d_in < 1 || b.d_out < 1 || b.d_qkv < 1 || b.n_heads < 1)
        throw std::invalid_argument(std::string("ModelConfig: non-positive dimension in ") + which);
      if (b.d_qkv % b.n_heads != 0)
        throw std::invalid_argument(std::string("ModelConfig: d_qkv must divide among heads in ") + which);
      if (i + 1 < blocks.size() && b.d_out != blocks[i + 1].d_in)
        throw std::invalid_argument(std::string("ModelConfig: block widths do not chain in ") + which);
    }
  };
  check_chain(encoder_blocks, "encoder");
  check_chain(decoder_blocks, "decoder");
  if (encoder_width() % 2 != 0 || decoder_width() % 2 != 0)
    throw std::invalid_argument("ModelConfig: positional encoding requires even block widths");
}

json ModelConfig::to_json() const {
  auto blocks_json = [](const std::vector<BlockConfig>& blocks) {
    json arr = json::array();
    for (const auto& b : blocks) arr.push_back({b.d_in, b.d_out, b.d_qkv, b.n_heads});
    return arr;
  };
  return json{{"name", name},
              {"input_dim", input_dim},
              {"embed_dim", embed_dim},
              {"encoder_blocks", blocks_json(encoder_blocks)},
              {"decoder_blocks", blocks_json(decoder_blocks)},
              {"tuple_len", tuple_len},
              {"max_frames", max_frames},
              {"max_joints", max_joints},
              {"ffn_mult", ffn_mult}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  if (j.is_string()) return preset(j.get<std::string>());
  ModelConfig cfg;
  cfg.name = j.value("name", "custom");
  cfg.input_dim = j.value("input_dim", 3);
  cfg.embed_dim = j.value("embed_dim", 256);
  cfg.tuple_len = j.value("tuple_len", 2);
  cfg.max_frames = j.value("max_frames", 20);
  cfg.max_joints = j.value("max_joints", 25);
  cfg.ffn_mult = j.value("ffn_mult", 4);
  auto blocks_from = [](const json& arr) {
    std::vector<BlockConfig> blocks;
    for (const auto& b : arr) {
      BlockConfig bc;
      bc.d_in = b.at(0).get<int>();
      bc.d_out = b.at(1).get<int>();
      bc.d_qkv = b.at(2).get<int>();
      bc.n_heads = b.size() > 3 ? b.at(3).get<int>() : 4;
      blocks.push_back(bc);
    }
    return blocks;
  };
  cfg.encoder_blocks = blocks_from(j.at("encoder_blocks"));
  cfg.decoder_blocks = blocks_from(j.at("decoder_blocks"));
  cfg.validate();
  return cfg;
}

namespace {

std::vector<BlockConfig> make_blocks(std::initializer_list<std::array<int, 3>> dims, int n_heads) {
  std::vector<BlockConfig> out;
  for (const auto& d : dims) out.push_back({d[0], d[1], d[2], n_heads});
  return out;
}

// Encoder ramp shared by all three dim256 decoder-depth variants.
std::vector<BlockConfig> encoder_256() {
  return make_blocks({{64, 64, 16},
                      {64, 64, 16},
                      {64, 128, 32},
                      {128, 128, 32},
                      {128, 256, 64},
                      {256, 256, 64},
                      {256, 256, 64},
                      {256, 256, 64}},
                     4);
}

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig cfg;
  cfg.name = name;
  if (name == "dim256-depth9") {
    cfg.embed_dim = 256;
    cfg.encoder_blocks = encoder_256();
    cfg.decoder_blocks = make_blocks({{256, 256, 64},
                                      {256, 256, 64},
                                      {256, 256, 64},
                                      {256, 128, 64},
                                      {128, 128, 32},
                                      {128, 64, 32},
                                      {64, 64, 16},
                                      {64, 64, 16}},
                                     4);
  } else if (name == "dim512-depth9") {
    cfg.embed_dim = 512;
    cfg.encoder_blocks = make_blocks({{64, 64, 16},
                                      {64, 128, 32},
                                      {128, 128, 32},
                                      {128, 256, 64},
                                      {256, 256, 64},
                                      {256, 512, 128},
                                      {512, 512, 128},
                                      {512, 512, 128}},
                                     4);
    cfg.decoder_blocks = make_blocks({{512, 512, 128},
                                      {512, 512, 128},
                                      {512, 256, 64},
                                      {256, 256, 64},
                                      {256, 128, 32},
                                      {128, 128, 32},
                                      {128, 64, 16},
                                      {64, 64, 16}},
                                     4);
  } else if (name == "dim128-depth9") {
    cfg.embed_dim = 128;
    cfg.encoder_blocks = make_blocks({{32, 32, 8},
                                      {32, 32, 8},
                                      {32, 64, 16},
                                      {64, 64, 16},
                                      {64, 128, 32},
                                      {128, 128, 32},
                                      {128, 128, 32},
                                      {128, 128, 32}},
                                     4);
    cfg.decoder_blocks = make_blocks({{128, 128, 32},
                                      {128, 128, 32},
                                      {128, 128, 32},
                                      {128, 64, 32},
                                      {64, 64, 16},
                                      {64, 32, 16},
                                      {32, 32, 8},
                                      {32, 32, 8}},
                                     4);
  } else if (name == "dim256-depth5") {
    cfg.embed_dim = 256;
    cfg.encoder_blocks = encoder_256();
    cfg.decoder_blocks = make_blocks({{256, 128, 64}, {128, 128, 32}, {128, 64, 32}, {64, 64, 16}}, 4);
  } else if (name == "dim256-depth7") {
    cfg.embed_dim = 256;
    cfg.encoder_blocks = encoder_256();
    cfg.decoder_blocks = make_blocks(
        {{256, 256, 64}, {256, 256, 64}, {256, 128, 64}, {128, 128, 32}, {128, 64, 32}, {64, 64, 16}}, 4);
  } else if (name == "dim256-depth11") {
    cfg.embed_dim = 256;
    cfg.encoder_blocks = encoder_256();
    cfg.decoder_blocks = make_blocks({{256, 256, 64},
                                      {256, 256, 64},
                                      {256, 256, 64},
                                      {256, 256, 64},
                                      {256, 128, 64},
                                      {128, 128, 32},
                                      {128, 128, 32},
                                      {128, 64, 32},
                                      {64, 64, 16},
                                      {64, 64, 16}},
                                     4);
  } else if (name == "tiny") {
    // Desk-scale configuration for tests and sweeps; not one of the
    // published tables.
    cfg.embed_dim = 32;
    cfg.ffn_mult = 2;
    cfg.encoder_blocks = make_blocks({{16, 16, 8}, {16, 32, 8}}, 4);
    cfg.decoder_blocks = make_blocks({{32, 32, 8}, {32, 16, 8}}, 4);
  } else {
    throw std::invalid_argument("unknown model preset: " + name);
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> ModelConfig::preset_names() {
  return {"dim256-depth9", "dim512-depth9", "dim128-depth9",
          "dim256-depth5", "dim256-depth7", "dim256-depth11", "tiny"};
}

// ---------------------------------------------------------------------------
// positional encoding
// ---------------------------------------------------------------------------

std::vector<double> positional_encoding(int frame_idx, int joint_idx, int max_joints, int d_model,
                                        int max_frames) {
  if (d_model % 2 != 0) throw std::invalid_argument("positional_encoding: d_model must be even");
  if (joint_idx < 0 || joint_idx >= max_joints)
    throw std::invalid_argument("positional_encoding: joint index out of range");
  if (frame_idx < 0 || (max_frames >= 0 && frame_idx >= max_frames))
    throw std::invalid_argument("positional_encoding: frame index out of range");
  const double p = static_cast<double>(frame_idx) * max_joints + joint_idx;
  std::vector<double> out(static_cast<size_t>(d_model));
  for (int k = 0; 2 * k < d_model; ++k) {
    const double rate = std::pow(10000.0, 2.0 * k / d_model);
    out[static_cast<size_t>(2 * k)] = std::sin(p / rate);
    out[static_cast<size_t>(2 * k + 1)] = std::cos(p / rate);
  }
  return out;
}

namespace {

// Constant (n_tokens, d_model) table for a token id list.
Tensor positional_table(const std::vector<int>& frame_ids, const std::vector<int>& joint_ids,
                        int max_joints, int max_frames, int d_model) {
  std::vector<double> data;
  data.reserve(frame_ids.size() * static_cast<size_t>(d_model));
  for (size_t i = 0; i < frame_ids.size(); ++i) {
    auto row = positional_encoding(frame_ids[i], joint_ids[i], max_joints, d_model, max_frames);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor::from_data({static_cast<int64_t>(frame_ids.size()), d_model}, std::move(data));
}

}  // namespace

// ---------------------------------------------------------------------------
// tuple grouping
// ---------------------------------------------------------------------------

TuplePlan plan_tuples(int n_frames, int tokens_per_frame, int tuple_len) {
  if (tuple_len < 1) throw std::invalid_argument("plan_tuples: tuple_len must be >= 1");
  if (n_frames < 1) throw std::invalid_argument("plan_tuples: no frames");
  if (tuple_len > n_frames)
    throw std::invalid_argument("plan_tuples: tuple_len " + std::to_string(tuple_len) +
                                " exceeds frame count " + std::to_string(n_frames));
  TuplePlan plan;
  plan.frames_per_tuple = tuple_len;
  plan.tokens_per_frame = tokens_per_frame;
  plan.n_tuples = (n_frames + tuple_len - 1) / tuple_len;
  plan.real_tokens = n_frames * tokens_per_frame;
  plan.padded_tokens = plan.n_tuples * tuple_len * tokens_per_frame;
  plan.gather.reserve(static_cast<size_t>(plan.padded_tokens));
  for (int f = 0; f < plan.n_tuples * tuple_len; ++f) {
    const int src = std::min(f, n_frames - 1);  // pad by repeating the last frame
    for (int t = 0; t < tokens_per_frame; ++t)
      plan.gather.push_back(static_cast<int64_t>(src) * tokens_per_frame + t);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Tensor t;
  switch (init) {
    case Init::kZeros:
      t = Tensor::zeros(std::move(shape), true);
      break;
    case Init::kOnes:
      t = Tensor::full(std::move(shape), 1.0, true);
      break;
    case Init::kTruncNormal: {
      t = Tensor::zeros(std::move(shape), true);
      for (auto& v : t.mutable_values()) v = rng.trunc_normal(0.02);
      break;
    }
  }
  items_.emplace_back(name, t);
  return t;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

int64_t ParamStore::total_size() const {
  int64_t total = 0;
  for (const auto& [n, t] : items_) total += t.size();
  return total;
}

void ParamStore::zero_grads() {
  for (auto& [n, t] : items_) t.zero_grad();
}

namespace {

LinearParams add_linear(ParamStore& store, const std::string& prefix, int d_in, int d_out, Rng& rng) {
  LinearParams p;
  p.weight = store.add(prefix + ".weight", {d_in, d_out}, ParamStore::Init::kTruncNormal, rng);
  p.bias = store.add(prefix + ".bias", {d_out}, ParamStore::Init::kZeros, rng);
  return p;
}

SttaBlockParams add_block(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                          int ffn_mult, Rng& rng) {
  SttaBlockParams p;
  p.cfg = cfg;
  p.query = add_linear(store, prefix + ".attn.query", cfg.d_in, cfg.d_qkv, rng);
  p.key = add_linear(store, prefix + ".attn.key", cfg.d_in, cfg.d_qkv, rng);
  p.value = add_linear(store, prefix + ".attn.value", cfg.d_in, cfg.d_qkv, rng);
  p.out = add_linear(store, prefix + ".attn.out", cfg.d_qkv, cfg.d_out, rng);
  if (cfg.d_in != cfg.d_out)
    p.residual_proj = add_linear(store, prefix + ".residual", cfg.d_in, cfg.d_out, rng);
  p.ln1_gain = store.add(prefix + ".ln1.gain", {cfg.d_out}, ParamStore::Init::kOnes, rng);
  p.ln1_bias = store.add(prefix + ".ln1.bias", {cfg.d_out}, ParamStore::Init::kZeros, rng);
  p.ffn_in = add_linear(store, prefix + ".ffn.in", cfg.d_out, cfg.d_out * ffn_mult, rng);
  p.ffn_out = add_linear(store, prefix + ".ffn.out", cfg.d_out * ffn_mult, cfg.d_out, rng);
  p.ln2_gain = store.add(prefix + ".ln2.gain", {cfg.d_out}, ParamStore::Init::kOnes, rng);
  p.ln2_bias = store.add(prefix + ".ln2.bias", {cfg.d_out}, ParamStore::Init::kZeros, rng);
  return p;
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

// ---------------------------------------------------------------------------
// attention block
// ---------------------------------------------------------------------------

Tensor stta_forward(const Tensor& x, const SttaBlockParams& p) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != p.cfg.d_in) {
    std::ostringstream os;
    os << "stta_forward: expected (tuples, tokens, " << p.cfg.d_in << "), got " << shape_str(s);
    throw ShapeError(os.str());
  }
  const int64_t n_tuples = s[0], n_tok = s[1];
  const int64_t heads = p.cfg.n_heads, dh = p.cfg.d_qkv / heads;

  auto split_heads = [&](const Tensor& t) {
    // (B, n, q) -> (B, h, n, dh)
    return transpose(reshape(t, {n_tuples, n_tok, heads, dh}), {0, 2, 1, 3});
  };
  Tensor q = split_heads(linear(x, p.query.weight, p.query.bias));
  Tensor k = split_heads(linear(x, p.key.weight, p.key.bias));
  Tensor v = split_heads(linear(x, p.value.weight, p.value.bias));

  Tensor scores = mul_scalar(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax(scores, -1);
  Tensor ctx = matmul(attn, v);  // (B, h, n, dh)
  ctx = reshape(transpose(ctx, {0, 2, 1, 3}), {n_tuples, n_tok, p.cfg.d_qkv});
  Tensor attended = linear(ctx, p.out.weight, p.out.bias);

  Tensor res = p.residual_proj ? linear(x, p.residual_proj->weight, p.residual_proj->bias) : x;
  Tensor y1 = layer_norm(add(res, attended), p.ln1_gain, p.ln1_bias, kLayerNormEps);

  Tensor f = linear(gelu(linear(y1, p.ffn_in.weight, p.ffn_in.bias)), p.ffn_out.weight, p.ffn_out.bias);
  return layer_norm(add(y1, f), p.ln2_gain, p.ln2_bias, kLayerNormEps);
}

namespace {

// Shared trunk: input layer, positional encoding, tuple grouping, block
// stack, un-padding. Token rows arrive frame-major with original indices.
Tensor trunk_forward(const Tensor& coords, const std::vector<int>& frame_ids,
                     const std::vector<int>& joint_ids, int n_frames, int tokens_per_frame,
                     const ModelConfig& cfg, const LinearParams& input_layer,
                     const std::vector<SttaBlockParams>& blocks) {
  Tensor x = linear(coords, input_layer.weight, input_layer.bias);
  x = add(x, positional_table(frame_ids, joint_ids, cfg.max_joints, cfg.max_frames,
                              blocks.front().d_in));

  TuplePlan tuples = plan_tuples(n_frames, tokens_per_frame, cfg.tuple_len);
  if (tuples.padded()) x = gather_rows(x, tuples.gather);
  x = reshape(x, {tuples.n_tuples, tuples.tokens_per_tuple(), blocks.front().d_in});
  for (const auto& block : blocks) x = stta_forward(x, block);
  x = reshape(x, {tuples.padded_tokens, blocks.back().d_out});
  if (tuples.padded()) {
    std::vector<int64_t> keep(static_cast<size_t>(tuples.real_tokens));
    for (int64_t i = 0; i < tuples.real_tokens; ++i) keep[static_cast<size_t>(i)] = i;
    x = gather_rows(x, std::move(keep));
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// SkeletonMae
// ---------------------------------------------------------------------------

SkeletonMae::SkeletonMae(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  input_layer_ = add_linear(params_, "encoder.input", cfg_.input_dim, cfg_.encoder_width(), rng);
  for (size_t i = 0; i < cfg_.encoder_blocks.size(); ++i)
    encoder_.push_back(add_block(params_, "encoder.block" + std::to_string(i),
                                 cfg_.encoder_blocks[i], cfg_.ffn_mult, rng));
  mask_token_ = params_.add("decoder.mask_token", {cfg_.decoder_width()},
                            ParamStore::Init::kTruncNormal, rng);
  if (cfg_.encoder_out_width() != cfg_.decoder_width())
    latent_adapter_ = add_linear(params_, "decoder.latent_adapter", cfg_.encoder_out_width(),
                                 cfg_.decoder_width(), rng);
  for (size_t i = 0; i < cfg_.decoder_blocks.size(); ++i)
    decoder_.push_back(add_block(params_, "decoder.block" + std::to_string(i),
                                 cfg_.decoder_blocks[i], cfg_.ffn_mult, rng));
  output_layer_ = add_linear(params_, "decoder.output", cfg_.decoder_out_width(), cfg_.input_dim, rng);
}

Tensor SkeletonMae::encode(const MaskedSequence& input) const {
  const MaskPlan& plan = input.plan;
  if (input.coord_dim != cfg_.input_dim)
    throw ShapeError("encode: coordinate dim " + std::to_string(input.coord_dim) +
                     " does not match model input dim " + std::to_string(cfg_.input_dim));
  if (plan.num_frames > cfg_.max_frames || plan.num_joints > cfg_.max_joints)
    throw ShapeError("encode: sequence exceeds configured max_frames/max_joints");

  const int t_vis = plan.visible_frame_count();
  const int j_vis = plan.visible_joint_count();
  std::vector<int> frame_ids, joint_ids;
  frame_ids.reserve(static_cast<size_t>(t_vis) * j_vis);
  joint_ids.reserve(static_cast<size_t>(t_vis) * j_vis);
  for (int vf = 0; vf < t_vis; ++vf)
    for (int j : plan.visible_joints[static_cast<size_t>(vf)]) {
      frame_ids.push_back(plan.visible_frames[static_cast<size_t>(vf)]);
      joint_ids.push_back(j);
    }

  Tensor coords = Tensor::from_data({static_cast<int64_t>(t_vis) * j_vis, cfg_.input_dim}, input.visible);
  return trunk_forward(coords, frame_ids, joint_ids, t_vis, j_vis, cfg_, input_layer_, encoder_);
}

Tensor SkeletonMae::decode(const Tensor& latent, const MaskPlan& plan) const {
  const int t_vis = plan.visible_frame_count();
  const int j_vis = plan.visible_joint_count();
  if (latent.shape().size() != 2 || latent.shape()[0] != static_cast<int64_t>(t_vis) * j_vis)
    throw ShapeError("decode: latent " + shape_str(latent.shape()) + " does not match plan with " +
                     std::to_string(t_vis * j_vis) + " visible tokens");

  Tensor z = latent;
  if (latent_adapter_) z = linear(z, latent_adapter_->weight, latent_adapter_->bias);
  if (z.shape()[1] != cfg_.decoder_width())
    throw ShapeError("decode: latent width " + std::to_string(z.shape()[1]) +
                     " does not match decoder input width " + std::to_string(cfg_.decoder_width()));

  // Full-grid slot map: visible (t, j) -> its latent row, masked -> -1.
  const int T = plan.num_frames, J = plan.num_joints;
  std::vector<int64_t> slot(static_cast<size_t>(T) * J, -1);
  int64_t row = 0;
  for (int vf = 0; vf < t_vis; ++vf) {
    const int t = plan.visible_frames[static_cast<size_t>(vf)];
    for (int j : plan.visible_joints[static_cast<size_t>(vf)])
      slot[static_cast<size_t>(t) * J + j] = row++;
  }

  Tensor x = assemble_rows(z, mask_token_, std::move(slot));
  std::vector<int> frame_ids, joint_ids;
  frame_ids.reserve(static_cast<size_t>(T) * J);
  joint_ids.reserve(static_cast<size_t>(T) * J);
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < J; ++j) {
      frame_ids.push_back(t);
      joint_ids.push_back(j);
    }
  x = add(x, positional_table(frame_ids, joint_ids, cfg_.max_joints, cfg_.max_frames, cfg_.decoder_width()));

  TuplePlan tuples = plan_tuples(T, J, cfg_.tuple_len);
  if (tuples.padded()) x = gather_rows(x, tuples.gather);
  x = reshape(x, {tuples.n_tuples, tuples.tokens_per_tuple(), cfg_.decoder_width()});
  for (const auto& block : decoder_) x = stta_forward(x, block);
  x = reshape(x, {tuples.padded_tokens, cfg_.decoder_out_width()});
  if (tuples.padded()) {
    std::vector<int64_t> keep(static_cast<size_t>(tuples.real_tokens));
    for (int64_t i = 0; i < tuples.real_tokens; ++i) keep[static_cast<size_t>(i)] = i;
    x = gather_rows(x, std::move(keep));
  }
  x = linear(x, output_layer_.weight, output_layer_.bias);
  return reshape(x, {T, J, cfg_.input_dim});
}

Tensor SkeletonMae::reconstruct(const MaskedSequence& input) const {
  return decode(encode(input), input.plan);
}

int64_t SkeletonMae::param_count() const { return params_.total_size(); }

Checkpoint SkeletonMae::checkpoint() const { return Checkpoint::snapshot(cfg_, params_); }

void SkeletonMae::load(const Checkpoint& ckpt) {
  for (auto& [name, tensor] : params_.items()) {
    const Tensor* src = ckpt.find(name);
    if (!src || src->shape() != tensor.shape()) {
      std::ostringstream os;
      os << "checkpoint mismatch for " << name << ": model expects " << shape_str(tensor.shape())
         << ", checkpoint has " << (src ? shape_str(src->shape()) : std::string("nothing"));
      throw std::runtime_error(os.str());
    }
    Tensor dst = tensor;
    std::copy(src->values().begin(), src->values().end(), dst.mutable_values().begin());
  }
}

// ---------------------------------------------------------------------------
// ActionClassifier
// ---------------------------------------------------------------------------

ActionClassifier::ActionClassifier(ModelConfig cfg, int n_classes, uint64_t seed)
    : cfg_(std::move(cfg)), n_classes_(n_classes) {
  cfg_.validate();
  if (n_classes_ < 2) throw std::invalid_argument("ActionClassifier: need at least 2 classes");
  Rng rng(seed);
  input_layer_ = add_linear(params_, "encoder.input", cfg_.input_dim, cfg_.encoder_width(), rng);
  for (size_t i = 0; i < cfg_.encoder_blocks.size(); ++i)
    encoder_.push_back(add_block(params_, "encoder.block" + std::to_string(i),
                                 cfg_.encoder_blocks[i], cfg_.ffn_mult, rng));
  head_ = add_linear(params_, "head", cfg_.encoder_out_width(), n_classes_, rng);
}

Tensor ActionClassifier::logits(const SkeletonSequence& seq) const {
  if (seq.coord_dim != cfg_.input_dim)
    throw ShapeError("logits: coordinate dim mismatch");
  if (seq.num_frames > cfg_.max_frames || seq.num_joints > cfg_.max_joints)
    throw ShapeError("logits: sequence exceeds configured max_frames/max_joints");

  std::vector<int> frame_ids, joint_ids;
  frame_ids.reserve(static_cast<size_t>(seq.num_frames) * seq.num_joints);
  joint_ids.reserve(static_cast<size_t>(seq.num_frames) * seq.num_joints);
  for (int t = 0; t < seq.num_frames; ++t)
    for (int j = 0; j < seq.num_joints; ++j) {
      frame_ids.push_back(t);
      joint_ids.push_back(j);
    }
  Tensor coords = Tensor::from_data(
      {static_cast<int64_t>(seq.num_frames) * seq.num_joints, cfg_.input_dim}, seq.frames);
  Tensor x = trunk_forward(coords, frame_ids, joint_ids, seq.num_frames, seq.num_joints, cfg_,
                           input_layer_, encoder_);
  Tensor pooled = mean_axis(x, 0);  // (d_enc)
  return linear(pooled, head_.weight, head_.bias);
}

Checkpoint ActionClassifier::checkpoint() const {
  return Checkpoint::snapshot(cfg_, params_, n_classes_);
}

void ActionClassifier::load(const Checkpoint& ckpt) {
  for (auto& [name, tensor] : params_.items()) {
    const Tensor* src = ckpt.find(name);
    if (!src || src->shape() != tensor.shape()) {
      std::ostringstream os;
      os << "checkpoint mismatch for " << name << ": model expects " << shape_str(tensor.shape())
         << ", checkpoint has " << (src ? shape_str(src->shape()) : std::string("nothing"));
      throw std::runtime_error(os.str());
    }
    Tensor dst = tensor;
    std::copy(src->values().begin(), src->values().end(), dst.mutable_values().begin());
  }
}

void ActionClassifier::load_encoder(const Checkpoint& pretrain_ckpt) {
  for (auto& [name, tensor] : params_.items()) {
    if (name.rfind("encoder.", 0) != 0) continue;
    const Tensor* src = pretrain_ckpt.find(name);
    if (!src || src->shape() != tensor.shape()) {
      std::ostringstream os;
      os << "encoder checkpoint mismatch for " << name << ": classifier expects "
         << shape_str(tensor.shape()) << ", checkpoint has "
         << (src ? shape_str(src->shape()) : std::string("nothing"));
      throw std::runtime_error(os.str());
    }
    Tensor dst = tensor;
    std::copy(src->values().begin(), src->values().end(), dst.mutable_values().begin());
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

Checkpoint Checkpoint::snapshot(const ModelConfig& cfg, const ParamStore& params,
                                std::optional<int> n_classes) {
  Checkpoint ckpt;
  ckpt.model_cfg = cfg;
  ckpt.n_classes = n_classes;
  for (const auto& [name, tensor] : params.items())
    ckpt.tensors.emplace_back(name, tensor.detached());
  return ckpt;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);

  json manifest;
  manifest["model"] = model_cfg.to_json();
  manifest["n_classes"] = n_classes ? json(*n_classes) : json(nullptr);
  json params = json::array();
  int64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    params.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
    offset += tensor.size() * 8;
  }
  manifest["params"] = std::move(params);

  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2);

  std::vector<unsigned char> blob;
  blob.reserve(static_cast<size_t>(offset));
  for (const auto& [name, tensor] : tensors) {
    for (double v : tensor.values()) {
      const uint64_t u = std::bit_cast<uint64_t>(v);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<unsigned char>((u >> (8 * b)) & 0xFF));
    }
  }
  std::ofstream bf(dir / "params.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  bf.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open checkpoint manifest: " + (dir / "manifest.json").string());
  json manifest;
  mf >> manifest;

  Checkpoint ckpt;
  ckpt.model_cfg = ModelConfig::from_json(manifest.at("model"));
  if (manifest.contains("n_classes") && !manifest.at("n_classes").is_null())
    ckpt.n_classes = manifest.at("n_classes").get<int>();

  std::ifstream bf(dir / "params.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot open checkpoint blob: " + (dir / "params.bin").string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  for (const auto& entry : manifest.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const int64_t offset = entry.at("offset").get<int64_t>();
    const int64_t count = numel(shape);
    if (offset < 0 || offset + count * 8 > static_cast<int64_t>(blob.size()))
      throw std::runtime_error("checkpoint blob truncated for parameter " + name);
    std::vector<double> values(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
      uint64_t u = 0;
      for (int b = 7; b >= 0; --b)
        u = (u << 8) | blob[static_cast<size_t>(offset + i * 8 + b)];
      values[static_cast<size_t>(i)] = std::bit_cast<double>(u);
    }
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(values)));
  }
  return ckpt;
}

}  // namespace skelmae
