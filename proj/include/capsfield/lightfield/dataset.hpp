#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "capsfield/lightfield/labels.hpp"
#include "capsfield/lightfield/light_field.hpp"
#include "capsfield/lightfield/synth.hpp"

namespace capsfield::lightfield {

inline constexpr std::string_view kManifestFormat = "capsfield-manifest-1";

/// How expression labels are assigned to samples.
///   paper:    neutral_frontal -> neutral, random_expression -> one of the
///             five non-neutral labels, every other variation -> neutral.
///   balanced: neutral_frontal -> neutral, everything else cycles through
///             all six labels, so the expression protocols see every class.
enum class ExpressionPolicy { paper, balanced };

/// Recipe for a synthetic dataset.
///
/// Wild recipes produce one shot per (environment, distance, variation,
/// repetition) cell for each subject: 2 x 3 x 6 = 36 shots with the defaults.
/// Constrained recipes produce the fixed 20-shot studio session (neutral,
/// three expressions, two actions, six head poses, two illuminations, six
/// occluders) indoors at close distance.
struct DatasetRecipe {
  std::string name = "synthetic";
  DatasetTag dataset = DatasetTag::wild;
  int subjects = 53;
  int first_subject = 1;
  std::size_t samples_per_cell = 1;
  std::size_t views = 7;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  double noise_sigma = 0.01;
  /// Horizontal disparity per view step for close / moderate / far shots.
  std::array<double, 3> disparity{1.5, 1.0, 0.6};
  /// Each subject's disparity is offset by a fixed U[-j, j] draw.
  double subject_disparity_jitter = 0.0;
  /// Subject s is further offset by step * (s - 1), which makes identities
  /// separable by disparity alone when the step is large.
  double subject_disparity_step = 0.0;
  /// d_v = ratio * d_h. Values other than 1 make the scene anisotropic.
  double vertical_disparity_ratio = 1.0;
  ExpressionPolicy expression_policy = ExpressionPolicy::paper;
  /// Subject appearance depends only on (roster_seed, subject), so a wild and
  /// a constrained recipe with the same roster seed show the same people.
  std::uint64_t roster_seed = 2020;
  /// Optional restrictions of the wild cell grid; empty means all values.
  std::vector<Environment> environments;
  std::vector<Distance> distances;
  std::vector<Variation> variations;

  void validate() const;
};

DatasetRecipe parse_recipe(std::string_view json_text);
DatasetRecipe load_recipe(const std::filesystem::path& path);
std::string recipe_to_json(const DatasetRecipe& recipe);

struct ManifestEntry {
  SampleMetadata meta;
  SceneSpec scene;
  std::uint64_t seed = 0;
  /// Directory of the view files, relative to the dataset root.
  std::string directory;
};

struct Manifest {
  std::string name;
  DatasetTag dataset = DatasetTag::wild;
  std::uint64_t seed = 0;
  std::size_t views = 7;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::string recipe_json;
  std::vector<ManifestEntry> entries;
  /// Where the view files live. Empty for a planned, in-memory dataset whose
  /// samples are rendered on demand.
  std::filesystem::path root;

  const ManifestEntry& find(std::string_view sample_id) const;
  /// Sorted distinct subject ids.
  std::vector<int> subjects() const;
};

/// Deterministic sample plan for (recipe, seed). Nothing is rendered.
Manifest plan_dataset(const DatasetRecipe& recipe, std::uint64_t seed);

/// Renders every planned sample to `<root>/<sample_id>/view_<r>_<c>.cft`
/// and writes `<root>/manifest.json`. Throws ConfigError if the root is not
/// writable and FormatError on duplicate sample ids.
Manifest generate_dataset(const DatasetRecipe& recipe, std::uint64_t seed,
                          const std::filesystem::path& root, std::size_t jobs = 1);

std::string manifest_to_json(const Manifest& manifest);
Manifest parse_manifest(std::string_view json_text);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
/// Reads `path` (a manifest file or a dataset directory) and sets `root`.
Manifest load_manifest(const std::filesystem::path& path);

/// Reads the view files of one entry. Throws FormatError when the directory
/// does not hold exactly V^2 view files, a file is corrupt, or a view's
/// dimensions disagree with the manifest.
SAArray load_sample(const Manifest& manifest, const ManifestEntry& entry);

/// Renders the entry from its scene description.
SAArray render_sample(const ManifestEntry& entry);

/// load_sample when the manifest has a root, render_sample otherwise.
SAArray fetch_sample(const Manifest& manifest, const ManifestEntry& entry);

}  // namespace capsfield::lightfield
