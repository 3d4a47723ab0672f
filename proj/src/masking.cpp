#include "skelmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace skelmae {

using nlohmann::json;

std::string to_string(MaskStrategy s) {
  return s == MaskStrategy::kRandom ? "random" : "fixed_index";
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
  if (s == "random") return MaskStrategy::kRandom;
  if (s == "fixed_index" || s == "fixed") return MaskStrategy::kFixedIndex;
  throw std::invalid_argument("unknown mask strategy: " + s);
}

namespace {

int masked_count(double ratio, int total, const char* what) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw std::invalid_argument(std::string(what) + " ratio must be in [0,1), got " + std::to_string(ratio));
  const int n = static_cast<int>(std::floor(ratio * total));
  if (n >= total)
    throw std::invalid_argument(std::string(what) + " masking would remove everything");
  return n;
}

std::vector<int> complement(const std::vector<int>& sorted_subset, int total) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(total) - sorted_subset.size());
  size_t k = 0;
  for (int i = 0; i < total; ++i) {
    if (k < sorted_subset.size() && sorted_subset[k] == i) {
      ++k;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace

void MaskSpec::validate(int num_frames, int num_joints) const {
  masked_count(frame_ratio, num_frames, "frame");
  masked_count(joint_ratio, num_joints, "joint");
}

json MaskSpec::to_json() const {
  return json{{"frame_ratio", frame_ratio},
              {"joint_ratio", joint_ratio},
              {"strategy", to_string(strategy)},
              {"seed", seed}};
}

MaskSpec MaskSpec::from_json(const json& j) {
  MaskSpec spec;
  spec.frame_ratio = j.at("frame_ratio").get<double>();
  spec.joint_ratio = j.at("joint_ratio").get<double>();
  spec.strategy = mask_strategy_from_string(j.value("strategy", "random"));
  spec.seed = j.value("seed", static_cast<uint64_t>(0));
  return spec;
}

bool MaskPlan::is_visible(int frame, int joint) const {
  auto it = std::lower_bound(visible_frames.begin(), visible_frames.end(), frame);
  if (it == visible_frames.end() || *it != frame) return false;
  const size_t vi = static_cast<size_t>(it - visible_frames.begin());
  const auto& mj = masked_joints[vi];
  return !std::binary_search(mj.begin(), mj.end(), joint);
}

json MaskPlan::to_json() const {
  return json{{"T", num_frames},
              {"J", num_joints},
              {"masked_frames", masked_frames},
              {"visible_frames", visible_frames},
              {"masked_joints", masked_joints}};
}

MaskPlan MaskPlan::from_json(const json& j) {
  MaskPlan plan;
  plan.num_frames = j.at("T").get<int>();
  plan.num_joints = j.at("J").get<int>();
  plan.masked_frames = j.at("masked_frames").get<std::vector<int>>();
  plan.visible_frames = j.at("visible_frames").get<std::vector<int>>();
  plan.masked_joints = j.at("masked_joints").get<std::vector<std::vector<int>>>();
  plan.visible_joints.clear();
  for (const auto& mj : plan.masked_joints) plan.visible_joints.push_back(complement(mj, plan.num_joints));
  return plan;
}

std::pair<std::vector<int>, std::vector<int>> mask_temporal(int num_frames, double frame_ratio, Rng& rng) {
  const int n_mask = masked_count(frame_ratio, num_frames, "frame");
  std::vector<int> masked = rng.sample_without_replacement(num_frames, n_mask);
  std::vector<int> visible = complement(masked, num_frames);
  return {std::move(masked), std::move(visible)};
}

std::vector<std::vector<int>> mask_spatial_random(const std::vector<int>& visible_frames,
                                                  int num_joints, double joint_ratio, Rng& rng) {
  const int n_mask = masked_count(joint_ratio, num_joints, "joint");
  std::vector<std::vector<int>> out;
  out.reserve(visible_frames.size());
  for (size_t i = 0; i < visible_frames.size(); ++i)
    out.push_back(rng.sample_without_replacement(num_joints, n_mask));
  return out;
}

std::vector<std::vector<int>> mask_spatial_fixed(const std::vector<int>& visible_frames,
                                                 int num_joints, double joint_ratio, Rng& rng) {
  const int n_mask = masked_count(joint_ratio, num_joints, "joint");
  std::vector<int> shared = rng.sample_without_replacement(num_joints, n_mask);
  return std::vector<std::vector<int>>(visible_frames.size(), shared);
}

MaskedSequence apply_mask(const SkeletonSequence& seq, const MaskSpec& spec) {
  spec.validate(seq.num_frames, seq.num_joints);
  Rng rng(spec.seed);

  MaskPlan plan;
  plan.num_frames = seq.num_frames;
  plan.num_joints = seq.num_joints;
  std::tie(plan.masked_frames, plan.visible_frames) = mask_temporal(seq.num_frames, spec.frame_ratio, rng);
  plan.masked_joints = spec.strategy == MaskStrategy::kRandom
                           ? mask_spatial_random(plan.visible_frames, seq.num_joints, spec.joint_ratio, rng)
                           : mask_spatial_fixed(plan.visible_frames, seq.num_joints, spec.joint_ratio, rng);
  for (const auto& mj : plan.masked_joints) plan.visible_joints.push_back(complement(mj, seq.num_joints));

  MaskedSequence ms;
  ms.coord_dim = seq.coord_dim;
  const int j_vis = plan.visible_joint_count();
  ms.visible.reserve(static_cast<size_t>(plan.visible_frame_count() * j_vis * seq.coord_dim));
  for (int vf = 0; vf < plan.visible_frame_count(); ++vf) {
    const int t = plan.visible_frames[static_cast<size_t>(vf)];
    for (int j : plan.visible_joints[static_cast<size_t>(vf)])
      for (int d = 0; d < seq.coord_dim; ++d) ms.visible.push_back(seq.at(t, j, d));
  }
  ms.plan = std::move(plan);
  return ms;
}

std::vector<MaskSpec> mask_grid(const std::vector<std::pair<double, double>>& ratios,
                                const std::vector<MaskStrategy>& strategies, uint64_t seed) {
  std::vector<MaskSpec> out;
  for (MaskStrategy s : strategies) {
    for (const auto& [alpha, beta] : ratios) {
      MaskSpec spec;
      spec.frame_ratio = alpha;
      spec.joint_ratio = beta;
      spec.strategy = s;
      spec.seed = seed;
      out.push_back(spec);
    }
  }
  return out;
}

std::vector<MaskSpec> mask_grid(uint64_t seed) {
  std::vector<std::pair<double, double>> ratios;
  for (double alpha : {0.6, 0.5, 0.4})
    for (double beta : {0.4, 0.5, 0.6}) ratios.emplace_back(alpha, beta);
  return mask_grid(ratios, {MaskStrategy::kFixedIndex, MaskStrategy::kRandom}, seed);
}

}  // namespace skelmae
