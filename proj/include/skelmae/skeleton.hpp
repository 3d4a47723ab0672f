#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace skelmae {

/// A T x J x D sequence of joint coordinates (row-major, frame-major) with an
/// optional action label. NTU recordings use J = 25, D = 3; nothing below
/// depends on those specific values.
struct SkeletonSequence {
  int num_frames = 0;
  int num_joints = 0;
  int coord_dim = 0;
  std::vector<double> frames;  // num_frames * num_joints * coord_dim
  std::optional<int> label;
  std::optional<int> subject_id;

  double& at(int t, int j, int d) {
    return frames[static_cast<size_t>((t * num_joints + j) * coord_dim + d)];
  }
  double at(int t, int j, int d) const {
    return frames[static_cast<size_t>((t * num_joints + j) * coord_dim + d)];
  }

  nlohmann::json to_json() const;
  static SkeletonSequence from_json(const nlohmann::json& j);
};

struct Dataset {
  std::vector<SkeletonSequence> sequences;
  int class_count = 0;

  bool empty() const { return sequences.empty(); }
  size_t size() const { return sequences.size(); }
};

/// Synthetic action generator: each class displaces a subset of joints with a
/// class-specific sinusoid on top of a shared base pose, plus Gaussian noise.
/// Generation is a pure function of (spec, sample index).
struct JointMotion {
  int joint = 0;
  double amplitude = 0.0;  // meters
  double frequency = 0.0;  // cycles over the whole sequence
  double phase = 0.0;      // radians
  int axis = 1;            // coordinate the sinusoid displaces
};

struct SyntheticActionSpec {
  int class_count = 4;
  int joints_per_body = 25;
  int coord_dim = 3;
  std::vector<double> base_pose;             // joints_per_body * coord_dim
  std::vector<std::vector<JointMotion>> class_motions;  // one list per class
  double noise_sigma = 0.01;
  uint64_t seed = 0;

  /// Fills base_pose and class_motions with the default separable family:
  /// class c moves joints {j : j mod class_count == c} with class-specific
  /// amplitude, frequency and phase.
  static SyntheticActionSpec standard(int class_count, int joints = 25, int coord_dim = 3,
                                      double noise_sigma = 0.01, uint64_t seed = 0);

  nlohmann::json to_json() const;
  static SyntheticActionSpec from_json(const nlohmann::json& j);
};

/// Parses an NTU-style .skeleton text file and returns the first tracked
/// body. Frames with zero bodies are dropped. Throws std::runtime_error with
/// the offending line number on malformed input, or when no frame parses.
SkeletonSequence load_ntu_skeleton(const std::filesystem::path& path);

/// Forces the sequence to exactly target_frames frames: uniform temporal
/// subsampling when longer, last-frame repetition when shorter.
SkeletonSequence clip_or_pad(const SkeletonSequence& seq, int target_frames);

/// Translates every frame so the root joint of frame 0 sits at the origin.
SkeletonSequence normalize(const SkeletonSequence& seq, int root_joint);

Dataset generate_synthetic(const SyntheticActionSpec& spec, int n_per_class, int num_frames);

/// Per-class stratified split; test gets floor(test_fraction * n_c) of each
/// class. The two halves are disjoint and their union is the input.
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, uint64_t seed);

/// Per-class stratified subset keeping floor(fraction * n_c) samples.
Dataset subsample_labels(const Dataset& ds, double fraction, uint64_t seed);

void save_sequence_json(const SkeletonSequence& seq, const std::filesystem::path& path);
SkeletonSequence load_sequence_json(const std::filesystem::path& path);

}  // namespace skelmae
