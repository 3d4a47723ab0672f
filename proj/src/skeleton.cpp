#include "skelmae/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "skelmae/rng.hpp"

namespace skelmae {

using nlohmann::json;

json SkeletonSequence::to_json() const {
  json frames_j = json::array();
  for (int t = 0; t < num_frames; ++t) {
    json frame = json::array();
    for (int j = 0; j < num_joints; ++j) {
      json joint = json::array();
      for (int d = 0; d < coord_dim; ++d) joint.push_back(at(t, j, d));
      frame.push_back(std::move(joint));
    }
    frames_j.push_back(std::move(frame));
  }
  json out{{"T", num_frames}, {"J", num_joints}, {"D", coord_dim}, {"frames", std::move(frames_j)}};
  out["label"] = label ? json(*label) : json(nullptr);
  if (subject_id) out["subject_id"] = *subject_id;
  return out;
}

SkeletonSequence SkeletonSequence::from_json(const json& j) {
  SkeletonSequence seq;
  seq.num_frames = j.at("T").get<int>();
  seq.num_joints = j.at("J").get<int>();
  seq.coord_dim = j.at("D").get<int>();
  if (seq.num_frames <= 0 || seq.num_joints <= 0 || seq.coord_dim <= 0)
    throw std::runtime_error("sequence json: T, J, D must be positive");
  if (j.contains("label") && !j.at("label").is_null()) seq.label = j.at("label").get<int>();
  if (j.contains("subject_id") && !j.at("subject_id").is_null()) seq.subject_id = j.at("subject_id").get<int>();
  const auto& frames = j.at("frames");
  if (static_cast<int>(frames.size()) != seq.num_frames)
    throw std::runtime_error("sequence json: frame count does not match T");
  seq.frames.reserve(static_cast<size_t>(seq.num_frames * seq.num_joints * seq.coord_dim));
  for (const auto& frame : frames) {
    if (static_cast<int>(frame.size()) != seq.num_joints)
      throw std::runtime_error("sequence json: joint count does not match J");
    for (const auto& joint : frame) {
      if (static_cast<int>(joint.size()) != seq.coord_dim)
        throw std::runtime_error("sequence json: coordinate count does not match D");
      for (const auto& v : joint) seq.frames.push_back(v.get<double>());
    }
  }
  return seq;
}

void save_sequence_json(const SkeletonSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << seq.to_json().dump();
}

SkeletonSequence load_sequence_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json j;
  in >> j;
  return SkeletonSequence::from_json(j);
}

// ---------------------------------------------------------------------------
// NTU .skeleton parsing
// ---------------------------------------------------------------------------

namespace {

struct LineReader {
  std::istream& in;
  int line_no = 0;

  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("malformed .skeleton file at line " + std::to_string(line_no) + ": " + what);
  }
};

long parse_count(LineReader& r, const char* what) {
  std::string line;
  if (!r.next(line)) r.fail(std::string("unexpected end of file, expected ") + what);
  std::istringstream is(line);
  long v = 0;
  if (!(is >> v) || v < 0) r.fail(std::string("expected ") + what);
  return v;
}

}  // namespace

SkeletonSequence load_ntu_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open skeleton file: " + path.string());
  LineReader r{in};

  const long frame_count = parse_count(r, "frame count");
  SkeletonSequence seq;
  seq.coord_dim = 3;
  std::vector<double> coords;
  int kept_frames = 0;
  std::string line;

  for (long f = 0; f < frame_count; ++f) {
    const long body_count = parse_count(r, "body count");
    bool frame_kept = false;
    for (long b = 0; b < body_count; ++b) {
      if (!r.next(line)) r.fail("unexpected end of file, expected body info");
      const long joint_count = parse_count(r, "joint count");
      const bool keep = (b == 0);  // first tracked body only
      for (long j = 0; j < joint_count; ++j) {
        if (!r.next(line)) r.fail("unexpected end of file, expected joint line");
        std::istringstream is(line);
        double x, y, z;
        if (!(is >> x >> y >> z)) r.fail("joint line needs at least 3 numeric fields");
        if (keep) {
          coords.push_back(x);
          coords.push_back(y);
          coords.push_back(z);
        }
      }
      if (keep && joint_count > 0) {
        if (seq.num_joints == 0) {
          seq.num_joints = static_cast<int>(joint_count);
        } else if (seq.num_joints != static_cast<int>(joint_count)) {
          r.fail("joint count changed between frames");
        }
        frame_kept = true;
      }
    }
    if (frame_kept) ++kept_frames;
  }

  if (kept_frames == 0) throw std::runtime_error("zero parsable frames in " + path.string());
  seq.num_frames = kept_frames;
  seq.frames = std::move(coords);
  return seq;
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

SkeletonSequence clip_or_pad(const SkeletonSequence& seq, int target_frames) {
  if (target_frames < 1) throw std::invalid_argument("clip_or_pad: target must be >= 1");
  if (seq.num_frames <= 0) throw std::invalid_argument("clip_or_pad: empty input sequence");

  SkeletonSequence out;
  out.num_frames = target_frames;
  out.num_joints = seq.num_joints;
  out.coord_dim = seq.coord_dim;
  out.label = seq.label;
  out.subject_id = seq.subject_id;
  const size_t frame_len = static_cast<size_t>(seq.num_joints * seq.coord_dim);
  out.frames.resize(static_cast<size_t>(target_frames) * frame_len);

  for (int t = 0; t < target_frames; ++t) {
    int src;
    if (seq.num_frames >= target_frames) {
      // uniform subsampling: floor(t * T / target)
      src = static_cast<int>(static_cast<int64_t>(t) * seq.num_frames / target_frames);
    } else {
      src = std::min(t, seq.num_frames - 1);  // repeat last frame
    }
    std::copy_n(seq.frames.begin() + static_cast<size_t>(src) * frame_len, frame_len,
                out.frames.begin() + static_cast<size_t>(t) * frame_len);
  }
  return out;
}

SkeletonSequence normalize(const SkeletonSequence& seq, int root_joint) {
  if (root_joint < 0 || root_joint >= seq.num_joints)
    throw std::invalid_argument("normalize: root joint out of range");
  SkeletonSequence out = seq;
  std::vector<double> origin(static_cast<size_t>(seq.coord_dim));
  for (int d = 0; d < seq.coord_dim; ++d) origin[static_cast<size_t>(d)] = seq.at(0, root_joint, d);
  for (int t = 0; t < seq.num_frames; ++t)
    for (int j = 0; j < seq.num_joints; ++j)
      for (int d = 0; d < seq.coord_dim; ++d) out.at(t, j, d) -= origin[static_cast<size_t>(d)];
  return out;
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

SyntheticActionSpec SyntheticActionSpec::standard(int class_count, int joints, int coord_dim,
                                                  double noise_sigma, uint64_t seed) {
  SyntheticActionSpec spec;
  spec.class_count = class_count;
  spec.joints_per_body = joints;
  spec.coord_dim = coord_dim;
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;

  // Base pose: joints spread on a vertical zig-zag, loosely body-like.
  spec.base_pose.resize(static_cast<size_t>(joints * coord_dim), 0.0);
  for (int j = 0; j < joints; ++j) {
    spec.base_pose[static_cast<size_t>(j * coord_dim + 0)] = 0.15 * ((j % 5) - 2);
    if (coord_dim > 1) spec.base_pose[static_cast<size_t>(j * coord_dim + 1)] = 0.08 * j - 0.8;
    if (coord_dim > 2) spec.base_pose[static_cast<size_t>(j * coord_dim + 2)] = 0.05 * ((j * 7) % 3);
  }

  spec.class_motions.resize(static_cast<size_t>(class_count));
  for (int c = 0; c < class_count; ++c) {
    for (int j = 0; j < joints; ++j) {
      if (j % class_count != c) continue;
      JointMotion m;
      m.joint = j;
      m.amplitude = 0.25 + 0.05 * c;
      m.frequency = 1.0 + 0.5 * c;
      m.phase = 0.4 * c + 0.1 * j;
      m.axis = j % coord_dim;
      spec.class_motions[static_cast<size_t>(c)].push_back(m);
    }
  }
  return spec;
}

json SyntheticActionSpec::to_json() const {
  json classes = json::array();
  for (const auto& motions : class_motions) {
    json list = json::array();
    for (const auto& m : motions)
      list.push_back({{"joint", m.joint},
                      {"amplitude", m.amplitude},
                      {"frequency", m.frequency},
                      {"phase", m.phase},
                      {"axis", m.axis}});
    classes.push_back(std::move(list));
  }
  return json{{"class_count", class_count}, {"joints_per_body", joints_per_body},
              {"coord_dim", coord_dim},     {"base_pose", base_pose},
              {"class_motions", classes},   {"noise_sigma", noise_sigma},
              {"seed", seed}};
}

SyntheticActionSpec SyntheticActionSpec::from_json(const json& j) {
  SyntheticActionSpec spec = standard(j.at("class_count").get<int>(),
                                      j.value("joints_per_body", 25),
                                      j.value("coord_dim", 3),
                                      j.value("noise_sigma", 0.01),
                                      j.value("seed", static_cast<uint64_t>(0)));
  if (j.contains("base_pose")) spec.base_pose = j.at("base_pose").get<std::vector<double>>();
  if (j.contains("class_motions")) {
    spec.class_motions.clear();
    for (const auto& list : j.at("class_motions")) {
      std::vector<JointMotion> motions;
      for (const auto& mj : list) {
        JointMotion m;
        m.joint = mj.at("joint").get<int>();
        m.amplitude = mj.at("amplitude").get<double>();
        m.frequency = mj.at("frequency").get<double>();
        m.phase = mj.value("phase", 0.0);
        m.axis = mj.value("axis", 1);
        motions.push_back(m);
      }
      spec.class_motions.push_back(std::move(motions));
    }
  }
  return spec;
}

Dataset generate_synthetic(const SyntheticActionSpec& spec, int n_per_class, int num_frames) {
  if (spec.class_count < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
  if (n_per_class < 1) throw std::invalid_argument("generate_synthetic: n_per_class must be >= 1");
  if (static_cast<int>(spec.class_motions.size()) != spec.class_count)
    throw std::invalid_argument("generate_synthetic: one motion list per class required");
  if (static_cast<int>(spec.base_pose.size()) != spec.joints_per_body * spec.coord_dim)
    throw std::invalid_argument("generate_synthetic: base_pose size mismatch");

  constexpr double kTau = 6.28318530717958647692;
  Dataset ds;
  ds.class_count = spec.class_count;
  ds.sequences.reserve(static_cast<size_t>(spec.class_count) * static_cast<size_t>(n_per_class));

  for (int c = 0; c < spec.class_count; ++c) {
    for (int i = 0; i < n_per_class; ++i) {
      const uint64_t sample_index = static_cast<uint64_t>(c) * static_cast<uint64_t>(n_per_class) +
                                    static_cast<uint64_t>(i);
      Rng rng(derive_seed(spec.seed, sample_index));
      SkeletonSequence seq;
      seq.num_frames = num_frames;
      seq.num_joints = spec.joints_per_body;
      seq.coord_dim = spec.coord_dim;
      seq.label = c;
      seq.frames.resize(static_cast<size_t>(num_frames * spec.joints_per_body * spec.coord_dim));
      for (int t = 0; t < num_frames; ++t)
        for (int j = 0; j < spec.joints_per_body; ++j)
          for (int d = 0; d < spec.coord_dim; ++d)
            seq.at(t, j, d) = spec.base_pose[static_cast<size_t>(j * spec.coord_dim + d)];
      for (const auto& m : spec.class_motions[static_cast<size_t>(c)]) {
        for (int t = 0; t < num_frames; ++t) {
          const double phase = kTau * m.frequency * t / num_frames + m.phase;
          seq.at(t, m.joint, m.axis) += m.amplitude * std::sin(phase);
        }
      }
      if (spec.noise_sigma > 0.0)
        for (auto& v : seq.frames) v += spec.noise_sigma * rng.normal();
      ds.sequences.push_back(std::move(seq));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

namespace {

std::map<int, std::vector<size_t>> indices_by_class(const Dataset& ds) {
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    if (!ds.sequences[i].label) throw std::invalid_argument("stratified operation requires labels on every sequence");
    by_class[*ds.sequences[i].label].push_back(i);
  }
  return by_class;
}

}  // namespace

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, uint64_t seed) {
  if (ds.empty()) throw std::invalid_argument("split: empty dataset");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split: test_fraction must be in (0,1)");

  auto by_class = indices_by_class(ds);
  std::vector<bool> in_test(ds.sequences.size(), false);
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw std::invalid_argument("split: class " + std::to_string(label) + " has fewer than 2 samples");
    Rng rng(derive_seed(seed, static_cast<uint64_t>(label)));
    rng.shuffle(idx);
    const size_t n_test = static_cast<size_t>(std::floor(test_fraction * static_cast<double>(idx.size())));
    for (size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
  }

  Dataset train, test;
  train.class_count = test.class_count = ds.class_count;
  for (size_t i = 0; i < ds.sequences.size(); ++i)
    (in_test[i] ? test : train).sequences.push_back(ds.sequences[i]);
  return {std::move(train), std::move(test)};
}

Dataset subsample_labels(const Dataset& ds, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample_labels: fraction must be in (0,1]");
  if (fraction == 1.0) return ds;

  auto by_class = indices_by_class(ds);
  std::vector<bool> keep(ds.sequences.size(), false);
  for (auto& [label, idx] : by_class) {
    const size_t n_keep = static_cast<size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    if (n_keep == 0)
      throw std::invalid_argument("subsample_labels: fraction leaves class " + std::to_string(label) + " empty");
    Rng rng(derive_seed(seed, static_cast<uint64_t>(label)));
    rng.shuffle(idx);
    for (size_t k = 0; k < n_keep; ++k) keep[idx[k]] = true;
  }

  Dataset out;
  out.class_count = ds.class_count;
  for (size_t i = 0; i < ds.sequences.size(); ++i)
    if (keep[i]) out.sequences.push_back(ds.sequences[i]);
  return out;
}

}  // namespace skelmae
