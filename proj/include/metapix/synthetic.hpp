#pragma once

#include "metapix/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace metapix {

using Color = Eigen::Vector3f;

/// Kinematic tree rooted at the pelvis (joint 0). Joint j > 0 hangs off
/// parent[j] through bone j-1.
struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parent;          // parent[0] == -1
  std::vector<double> bone_length;  // J-1 entries, normalized image units
  std::vector<double> rest_angle;   // J-1 entries, relative to the parent bone
  std::vector<int> spine_bones;     // bones drawn as the torso
  int head_joint = -1;

  int joints() const { return int(parent.size()); }
  int bones() const { return joints() - 1; }

  /// Humanoid figure with 8 joints (pelvis, chest, neck, head, hands, feet)
  /// or 12 joints (adds elbows and knees).
  static Skeleton humanoid(int joints = 8);

  /// Throws if the parent array is not a tree ordered parent-before-child or
  /// a bone length falls outside (0, 0.5).
  void validate() const;
};

struct Pose {
  Eigen::Vector2d root{0.5, 0.58};
  std::vector<double> angles;  // radians, one per bone, relative to the parent bone

  bool operator==(const Pose&) const = default;
};

/// Absolute joint positions in normalized image coordinates (y grows down).
std::vector<Eigen::Vector2d> joint_positions(const Pose& pose, const Skeleton& skeleton);

struct Background {
  Color color_a = Color::Zero();
  Color color_b = Color::Zero();
  float angle = 0.0f;
  float noise_amplitude = 0.0f;
  std::uint64_t noise_seed = 0;

  bool operator==(const Background&) const = default;
};

struct Appearance {
  std::uint64_t seed = 0;
  std::vector<Color> limb_colors;  // one per bone
  Color torso_color = Color::Zero();
  Color head_color = Color::Zero();
  float limb_thickness = 0.07f;  // full stroke width, normalized units
  Background background;

  bool operator==(const Appearance&) const = default;
};

/// Deterministic per-task palette and background.
Appearance sample_appearance(std::uint64_t seed, int bones = 7);

/// Smooth trajectory: every angle is a rest pose plus two sinusoids with
/// random amplitude, frequency and phase; the root drifts the same way.
std::vector<Pose> pose_trajectory(std::uint64_t seed, int n_frames, const Skeleton& skeleton);

/// J x H x W stack of unnormalized Gaussians (peak 1) at the joint pixels,
/// truncated beyond 3 sigma.
TensorF render_heatmap(const Pose& pose, const Skeleton& skeleton, int height, int width, double sigma);

struct RenderedFrame {
  TensorF image;                                  // 3 x H x W in [0, 1]
  Eigen::Array<bool, Eigen::Dynamic, 1> figure;  // H*W, true where the figure has coverage
};

RenderedFrame render(const Pose& pose, const Appearance& appearance, const Skeleton& skeleton, int height,
                     int width);

inline TensorF render_frame(const Pose& pose, const Appearance& appearance, const Skeleton& skeleton, int height,
                            int width) {
  return render(pose, appearance, skeleton, height, width).image;
}

/// Rounds [0, 1] values to the nearest 8-bit level.
TensorF quantize8(const TensorF& image);

struct CorpusConfig {
  std::uint64_t seed = 0;
  int height = 32;
  int width = 32;
  int joints = 8;
  double sigma = 1.5;
  double split_ratio = 0.85;
};

struct TaskDataset {
  int id = 0;
  Appearance appearance;
  std::vector<Pose> poses;
  std::vector<TensorF> frames;  // 3 x H x W, 8-bit quantized
  int split_index = 0;          // frames [0, split) personalize, [split, N) test

  int size() const { return int(frames.size()); }
  int pool_size() const { return split_index; }
  int test_size() const { return size() - split_index; }
};

int split_index_for(int n_frames, double split_ratio);

struct Corpus {
  CorpusConfig config;
  Skeleton skeleton;
  std::vector<TaskDataset> tasks;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

TaskDataset make_task(int id, std::uint64_t task_seed, int n_frames, const CorpusConfig& config,
                      const Skeleton& skeleton);

Corpus build_corpus(int n_tasks, int frames_per_task, const CorpusConfig& config);

/// Writes corpus.json and one task_<id> directory per task.
void save_corpus(const Corpus& corpus, const std::filesystem::path& root);
Corpus load_corpus(const std::filesystem::path& root);

}  // namespace metapix
