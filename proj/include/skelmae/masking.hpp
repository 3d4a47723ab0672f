#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "skelmae/rng.hpp"
#include "skelmae/skeleton.hpp"

namespace skelmae {

enum class MaskStrategy { kRandom, kFixedIndex };

std::string to_string(MaskStrategy s);
MaskStrategy mask_strategy_from_string(const std::string& s);

/// Masking configuration: frame ratio (temporal), joint ratio (spatial),
/// spatial strategy, and the stream seed. Mask counts round down, so at
/// least one frame and one joint per visible frame always survive for
/// ratios in [0, 1).
struct MaskSpec {
  double frame_ratio = 0.5;  // alpha
  double joint_ratio = 0.5;  // beta
  MaskStrategy strategy = MaskStrategy::kRandom;
  uint64_t seed = 0;

  void validate(int num_frames, int num_joints) const;

  nlohmann::json to_json() const;
  static MaskSpec from_json(const nlohmann::json& j);
};

/// A realized mask: which frames were dropped, and which joints were dropped
/// within each surviving frame. Index sets are sorted ascending, so survivor
/// order always matches original frame/joint order.
struct MaskPlan {
  int num_frames = 0;
  int num_joints = 0;
  std::vector<int> masked_frames;
  std::vector<int> visible_frames;
  std::vector<std::vector<int>> masked_joints;   // per visible frame
  std::vector<std::vector<int>> visible_joints;  // per visible frame

  int visible_frame_count() const { return static_cast<int>(visible_frames.size()); }
  int visible_joint_count() const {
    return visible_joints.empty() ? num_joints : static_cast<int>(visible_joints.front().size());
  }
  /// True when (t, j), in original indices, survives the mask.
  bool is_visible(int frame, int joint) const;

  nlohmann::json to_json() const;
  static MaskPlan from_json(const nlohmann::json& j);
};

/// The surviving T' x J' x D tensor together with the plan that produced it.
struct MaskedSequence {
  MaskPlan plan;
  int coord_dim = 0;
  std::vector<double> visible;  // T' * J' * D, original frame/joint order

  double at(int vis_frame, int vis_joint, int d) const {
    return visible[static_cast<size_t>((vis_frame * plan.visible_joint_count() + vis_joint) *
                                       coord_dim + d)];
  }
};

/// Frame-level masking: a uniformly random floor(alpha * T)-subset of frames
/// is removed. Returns (masked, visible), both sorted.
std::pair<std::vector<int>, std::vector<int>> mask_temporal(int num_frames, double frame_ratio, Rng& rng);

/// Joint-level masking, random variant: every visible frame independently
/// draws its own floor(beta * J)-subset of joints.
std::vector<std::vector<int>> mask_spatial_random(const std::vector<int>& visible_frames,
                                                  int num_joints, double joint_ratio, Rng& rng);

/// Joint-level masking, fixed-index variant: one subset is drawn once and
/// reused for every visible frame.
std::vector<std::vector<int>> mask_spatial_fixed(const std::vector<int>& visible_frames,
                                                 int num_joints, double joint_ratio, Rng& rng);

/// Temporal masking followed by the selected spatial variant; gathers the
/// surviving coordinates. Deterministic in (seq, spec). Masked positions are
/// never read.
MaskedSequence apply_mask(const SkeletonSequence& seq, const MaskSpec& spec);

/// Expands (alpha, beta) pairs x strategies into MaskSpecs sharing `seed`.
std::vector<MaskSpec> mask_grid(const std::vector<std::pair<double, double>>& ratios,
                                const std::vector<MaskStrategy>& strategies, uint64_t seed = 0);

/// The standard 18-point grid: alpha, beta in {0.4, 0.5, 0.6}, both
/// strategies, alpha descending then beta ascending.
std::vector<MaskSpec> mask_grid(uint64_t seed = 0);

}  // namespace skelmae
