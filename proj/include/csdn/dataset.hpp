#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "csdn/types.hpp"

namespace csdn::data {

enum class Location : std::uint8_t { kIndoor = 0, kOutdoor = 1 };
enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

std::string_view to_string(Location l);
std::string_view to_string(Split s);
Location parse_location(std::string_view s);
Split parse_split(std::string_view s);

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  int pixels() const { return height * width; }
  bool operator==(const ImageShape&) const = default;
};

// Pixels are stored channel-major: row c holds the H*W plane of channel c.
using Image = Matrix;

struct SampleRecord {
  std::string sample_id;
  int identity = 0;
  Modality modality = Modality::kVisible;
  int camera_id = 0;
  Location location = Location::kIndoor;
  // "inline:<k>" for in-memory arrays, "blob:<file>#<k>" for the float32 sidecar
  // written by save_manifest, anything else is an image file path.
  std::string image_ref;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  int num_identities = 0;
  Split split = Split::kTrain;
  ImageShape image_shape;
  // images[i] holds the pixels of records[i] once materialized.
  std::vector<Image> images;
  // Per-record latent appearance vectors (synthetic data only, not serialized).
  Matrix sample_latents;

  const Image& image(std::size_t record) const;

  // Throws DataError when an invariant does not hold.
  void validate() const;
};

struct SyntheticSpec {
  int num_identities = 16;
  int images_per_id_per_modality = 8;
  ImageShape image_shape{32, 16, 3};
  std::uint64_t seed = 7;
  Split split = Split::kTrain;
  // Infrared sensor noise, as a fraction of the [0, 1] dynamic range.
  double noise_sigma = 0.1;
  // Intra-identity spread of the latent appearance vector.
  double latent_jitter = 0.15;
  int latent_dim = 8;
  // When false both splits render the same identities (fresh jitter, noise and
  // shifts per split); when true the test split draws its own identities.
  bool disjoint_test_identities = false;
};

// Renders a deterministic bimodal dataset. The rendering (texture bases, colour
// mixing, infrared response) depends only on `seed`; per-image variation depends
// on the split as well.
DatasetManifest generate_synthetic(const SyntheticSpec& spec);

struct BatchSpec {
  int num_identities = 8;
  int visible_per_identity = 4;
  int infrared_per_identity = 4;

  int batch_size() const { return num_identities * (visible_per_identity + infrared_per_identity); }
  int num_visible() const { return num_identities * visible_per_identity; }
  int num_infrared() const { return num_identities * infrared_per_identity; }
};

// Identity groups are contiguous; within a group visible samples precede infrared.
struct Batch {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<Modality> modality;
  std::vector<std::size_t> record_index;

  std::size_t size() const { return labels.size(); }
  // Row indices of the given modality, in batch order.
  std::vector<std::size_t> rows_of(Modality m) const;
};

// Throws ConfigError when the manifest has fewer than P identities.
Batch sample_batch(const DatasetManifest& manifest, const BatchSpec& spec, std::mt19937_64& rng);

void check_pk_feasible(const DatasetManifest& manifest);

enum class SearchMode : std::uint8_t { kAll = 0, kIndoor = 1 };
enum class Direction : std::uint8_t { kInfraredToVisible = 0, kVisibleToInfrared = 1 };

struct ProtocolSpec {
  SearchMode search_mode = SearchMode::kAll;
  int gallery_shots = 1;
  Direction direction = Direction::kInfraredToVisible;
  std::uint64_t trial_seed = 0;

  Modality query_modality() const;
  Modality gallery_modality() const;
  // Compact token such as "all-single-ir2vis"; accepted back by parse_protocol.
  std::string name() const;
};

// Accepts "<all|indoor>-<single|multi>[-<ir2vis|vis2ir>]" plus the aliases
// "single-shot" and "multi-shot" (all-search, infrared to visible).
ProtocolSpec parse_protocol(std::string_view token);

struct RetrievalSplit {
  std::vector<std::size_t> query;    // record indices
  std::vector<std::size_t> gallery;  // record indices, may repeat under multi-shot
  std::vector<int> excluded_identities;  // identities with no gallery-modality image
  bool empty_gallery = false;
};

RetrievalSplit protocol_split(const DatasetManifest& manifest, const ProtocolSpec& protocol);

// Line-delimited JSON: one header object, then one record per line. Images are
// written once to a float32 sidecar next to the manifest.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Nearest-centroid identity accuracy on the per-sample latents.
double latent_centroid_accuracy(const DatasetManifest& manifest);

}  // namespace csdn::data
