#include "csdn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#ifdef CSDN_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

#include "csdn/errors.hpp"

namespace csdn::data {

namespace {

constexpr int kVisibleCameras[] = {1, 2, 4, 5};
constexpr int kInfraredCameras[] = {3, 6};
constexpr std::string_view kManifestFormat = "csdn-manifest";
constexpr int kManifestVersion = 1;

Location camera_location(int camera) { return camera <= 3 ? Location::kIndoor : Location::kOutdoor; }

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Fixed rendering shared by every identity of a given seed.
struct RenderWorld {
  std::vector<Matrix> bases;  // latent_dim planes, each (H, W)
  Matrix visible_flat;        // (3, L)
  Matrix visible_texture;     // (3, L)
  Vector infrared_flat;       // (L)
  Vector infrared_texture;    // (L)
};

RenderWorld make_world(const SyntheticSpec& spec) {
  auto rng = seeded(spec.seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int L = spec.latent_dim;
  const int H = spec.image_shape.height;
  const int W = spec.image_shape.width;

  RenderWorld world;
  // Oriented gratings with periods between 3 and 8 pixels. Orientations stay
  // within a quarter turn so a horizontal flip never maps one basis onto another.
  for (int l = 0; l < L; ++l) {
    const double angle = 0.5 * std::numbers::pi * (l + 0.5 * uniform(rng)) / L;
    const double period = 3.0 + 5.0 * uniform(rng);
    const double phase = 2.0 * std::numbers::pi * uniform(rng);
    const double kx = std::cos(angle) / period;
    const double ky = std::sin(angle) / period;
    Matrix plane(H, W);
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        plane(h, w) = std::cos(2.0 * std::numbers::pi * (kx * w + ky * h) + phase);
      }
    }
    world.bases.push_back(std::move(plane));
  }
  auto gaussian = [&](int rows, int cols) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
  };
  world.visible_flat = gaussian(3, L);
  world.infrared_flat = gaussian(L, 1);
  // Texture amplitudes are positive in both modalities; the per-basis gains
  // differ so the infrared texture is a reweighted version of the visible one.
  world.visible_texture.resize(3, L);
  world.infrared_texture.resize(L);
  for (int l = 0; l < L; ++l) {
    const double shared = 0.7 + 0.6 * uniform(rng);
    for (int c = 0; c < 3; ++c) world.visible_texture(c, l) = shared * (0.9 + 0.2 * uniform(rng));
    world.infrared_texture(l) = shared * (0.9 + 0.2 * uniform(rng));
  }
  return world;
}

Matrix identity_latents(const SyntheticSpec& spec) {
  const std::uint64_t pool = spec.disjoint_test_identities ? static_cast<std::uint64_t>(spec.split) : 0;
  auto rng = seeded(spec.seed, 1 + pool);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double min_separation = 1.5;
  Matrix z(spec.num_identities, spec.latent_dim);
  for (int id = 0; id < spec.num_identities; ++id) {
    for (int attempt = 0;; ++attempt) {
      // Amplitudes are non-negative: the sign of a grating is not observable
      // once the image is shifted.
      for (int l = 0; l < spec.latent_dim; ++l) z(id, l) = std::abs(normal(rng));
      bool separated = true;
      for (int other = 0; other < id && separated; ++other) {
        separated = (z.row(id) - z.row(other)).norm() >= min_separation;
      }
      if (separated || attempt > 1000) break;
    }
  }
  return z;
}

Image render(const RenderWorld& world, const SyntheticSpec& spec, const RowVector& latent, Modality m,
             std::mt19937_64& rng) {
  const int H = spec.image_shape.height;
  const int W = spec.image_shape.width;
  const int C = spec.image_shape.channels;
  constexpr double kFlatGain = 0.04;
  constexpr double kTextureGain = 0.16;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> shift_dist(-2, 2);
  const int dx = shift_dist(rng);
  const int dy = shift_dist(rng);

  auto texture = [&](const Vector& weights, int h, int w) {
    const int sh = ((h + dy) % H + H) % H;
    const int sw = ((w + dx) % W + W) % W;
    double v = 0.0;
    for (int l = 0; l < spec.latent_dim; ++l) v += latent(l) * weights(l) * world.bases[l](sh, sw);
    return v;
  };

  Image img(C, H * W);
  if (m == Modality::kVisible) {
    for (int c = 0; c < C; ++c) {
      const int mix = c % 3;
      const Vector flat = world.visible_flat.row(mix).transpose();
      const Vector tex = world.visible_texture.row(mix).transpose();
      const double base = 0.5 + kFlatGain * latent.dot(flat.transpose());
      for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
          const double v = base + kTextureGain * texture(tex, h, w) + 0.02 * normal(rng);
          img(c, h * W + w) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  } else {
    const double base = 0.5 + kFlatGain * latent.dot(world.infrared_flat.transpose());
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const double v = base + kTextureGain * texture(world.infrared_texture, h, w) + spec.noise_sigma * normal(rng);
        const double gray = std::clamp(v, 0.0, 1.0);
        for (int c = 0; c < C; ++c) img(c, h * W + w) = gray;
      }
    }
  }
  return img;
}

// Draws `count` items from `pool`: without replacement when the pool is large
// enough, otherwise every item once followed by uniform draws with replacement.
std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, int count, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  if (static_cast<int>(pool.size()) >= count) {
    std::vector<std::size_t> shuffled = pool;
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, shuffled.size() - 1);
      std::swap(shuffled[i], shuffled[pick(rng)]);
      out.push_back(shuffled[i]);
    }
  } else {
    out = pool;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    while (static_cast<int>(out.size()) < count) out.push_back(pool[pick(rng)]);
  }
  return out;
}

struct IdentityIndex {
  std::map<int, std::vector<std::size_t>> visible;
  std::map<int, std::vector<std::size_t>> infrared;
};

IdentityIndex index_by_identity(const DatasetManifest& manifest) {
  IdentityIndex idx;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    (r.modality == Modality::kVisible ? idx.visible : idx.infrared)[r.identity].push_back(i);
  }
  return idx;
}

Image load_image_file(const std::filesystem::path& path, const ImageShape& shape) {
#ifdef CSDN_HAVE_OPENCV
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw DataError("cannot decode image " + path.string());
  cv::Mat resized;
  cv::resize(raw, resized, cv::Size(shape.width, shape.height), 0, 0, cv::INTER_LINEAR);
  cv::cvtColor(resized, resized, cv::COLOR_BGR2RGB);
  Image img(shape.channels, shape.pixels());
  for (int h = 0; h < shape.height; ++h) {
    const auto* row = resized.ptr<cv::Vec3b>(h);
    for (int w = 0; w < shape.width; ++w) {
      for (int c = 0; c < shape.channels; ++c) img(c, h * shape.width + w) = row[w][c % 3] / 255.0;
    }
  }
  return img;
#else
  (void)shape;
  throw DataError("image decoding is unavailable in this build: " + path.string());
#endif
}

}  // namespace

std::string_view to_string(Location l) { return l == Location::kIndoor ? "indoor" : "outdoor"; }
std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Location parse_location(std::string_view s) {
  if (s == "indoor") return Location::kIndoor;
  if (s == "outdoor") return Location::kOutdoor;
  throw DataError("unknown location tag '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(s) + "'");
}

const Image& DatasetManifest::image(std::size_t record) const {
  if (record >= images.size()) throw DataError("image for record " + std::to_string(record) + " is not loaded");
  return images[record];
}

void DatasetManifest::validate() const {
  if (image_shape.height <= 0 || image_shape.width <= 0 || image_shape.channels <= 0) {
    throw DataError("manifest image_shape must be positive");
  }
  std::set<int> ids;
  for (const auto& r : records) {
    if (r.identity < 0 || r.identity >= num_identities) {
      throw DataError("record " + r.sample_id + " has identity " + std::to_string(r.identity) +
                      " outside [0, " + std::to_string(num_identities) + ")");
    }
    ids.insert(r.identity);
  }
  if (static_cast<int>(ids.size()) != num_identities) {
    throw DataError("num_identities is " + std::to_string(num_identities) + " but records cover " +
                    std::to_string(ids.size()) + " identities");
  }
  if (!images.empty() && images.size() != records.size()) {
    throw DataError("image count does not match record count");
  }
  if (split == Split::kTrain) check_pk_feasible(*this);
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec) {
  const auto& shape = spec.image_shape;
  if (shape.height < 4 || shape.width < 4 || shape.channels < 1) {
    throw ConfigError("synthetic image_shape must be at least 4x4 with one channel");
  }
  if (spec.num_identities < 2) throw ConfigError("synthetic num_identities must be >= 2");
  const int min_per_id = spec.split == Split::kTrain ? 2 : 1;
  if (spec.images_per_id_per_modality < min_per_id) {
    throw ConfigError("synthetic images_per_id_per_modality must be >= " + std::to_string(min_per_id) + " for the " +
                      std::string(to_string(spec.split)) + " split");
  }
  if (spec.latent_dim < 1) throw ConfigError("synthetic latent_dim must be >= 1");
  if (spec.noise_sigma < 0.0 || spec.latent_jitter < 0.0) throw ConfigError("synthetic noise levels must be >= 0");

  const RenderWorld world = make_world(spec);
  const Matrix latents = identity_latents(spec);
  auto rng = seeded(spec.seed, 16 + static_cast<std::uint64_t>(spec.split));
  std::normal_distribution<double> normal(0.0, 1.0);

  DatasetManifest manifest;
  manifest.num_identities = spec.num_identities;
  manifest.split = spec.split;
  manifest.image_shape = shape;
  const int total = spec.num_identities * spec.images_per_id_per_modality * 2;
  manifest.sample_latents.resize(total, spec.latent_dim);

  const std::string prefix(to_string(spec.split));
  for (int id = 0; id < spec.num_identities; ++id) {
    for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
      for (int k = 0; k < spec.images_per_id_per_modality; ++k) {
        RowVector z = latents.row(id);
        for (int l = 0; l < spec.latent_dim; ++l) z(l) = std::abs(z(l) + spec.latent_jitter * normal(rng));

        SampleRecord rec;
        rec.identity = id;
        rec.modality = m;
        rec.camera_id = m == Modality::kVisible ? kVisibleCameras[k % 4] : kInfraredCameras[k % 2];
        rec.location = camera_location(rec.camera_id);
        rec.sample_id = prefix + "_" + std::to_string(id) + (m == Modality::kVisible ? "_v" : "_r") +
                        std::to_string(k);
        const std::size_t index = manifest.records.size();
        rec.image_ref = "inline:" + std::to_string(index);
        manifest.sample_latents.row(static_cast<Eigen::Index>(index)) = z;
        manifest.images.push_back(render(world, spec, z, m, rng));
        manifest.records.push_back(std::move(rec));
      }
    }
  }
  return manifest;
}

std::vector<std::size_t> Batch::rows_of(Modality m) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < modality.size(); ++i)
    if (modality[i] == m) rows.push_back(i);
  return rows;
}

void check_pk_feasible(const DatasetManifest& manifest) {
  const IdentityIndex idx = index_by_identity(manifest);
  for (int id = 0; id < manifest.num_identities; ++id) {
    const auto v = idx.visible.find(id);
    const auto r = idx.infrared.find(id);
    const std::size_t nv = v == idx.visible.end() ? 0 : v->second.size();
    const std::size_t nr = r == idx.infrared.end() ? 0 : r->second.size();
    if (nv < 1 || nr < 1) {
      throw DataError("identity " + std::to_string(id) + " needs at least one visible and one infrared image (has " +
                      std::to_string(nv) + " visible, " + std::to_string(nr) + " infrared)");
    }
  }
}

Batch sample_batch(const DatasetManifest& manifest, const BatchSpec& spec, std::mt19937_64& rng) {
  if (spec.num_identities < 1 || spec.visible_per_identity < 1 || spec.infrared_per_identity < 1) {
    throw ConfigError("batch spec entries must be >= 1");
  }
  if (manifest.split != Split::kTrain) throw ConfigError("sample_batch requires a train-split manifest");
  if (manifest.num_identities < spec.num_identities) {
    throw ConfigError("batch needs " + std::to_string(spec.num_identities) + " identities but the manifest has " +
                      std::to_string(manifest.num_identities));
  }
  const IdentityIndex idx = index_by_identity(manifest);

  std::vector<std::size_t> ids(manifest.num_identities);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const std::vector<std::size_t> chosen = draw(ids, spec.num_identities, rng);

  Batch batch;
  batch.images.reserve(spec.batch_size());
  for (std::size_t id : chosen) {
    const int identity = static_cast<int>(id);
    const auto v = idx.visible.find(identity);
    const auto r = idx.infrared.find(identity);
    if (v == idx.visible.end() || r == idx.infrared.end()) {
      throw DataError("identity " + std::to_string(identity) + " lacks a visible or infrared image");
    }
    auto append = [&](const std::vector<std::size_t>& picks, Modality m) {
      for (std::size_t rec : picks) {
        batch.images.push_back(manifest.image(rec));
        batch.labels.push_back(identity);
        batch.modality.push_back(m);
        batch.record_index.push_back(rec);
      }
    };
    append(draw(v->second, spec.visible_per_identity, rng), Modality::kVisible);
    append(draw(r->second, spec.infrared_per_identity, rng), Modality::kInfrared);
  }
  return batch;
}

Modality ProtocolSpec::query_modality() const {
  return direction == Direction::kInfraredToVisible ? Modality::kInfrared : Modality::kVisible;
}

Modality ProtocolSpec::gallery_modality() const {
  return direction == Direction::kInfraredToVisible ? Modality::kVisible : Modality::kInfrared;
}

std::string ProtocolSpec::name() const {
  std::string out = search_mode == SearchMode::kAll ? "all" : "indoor";
  if (gallery_shots == 1) {
    out += "-single";
  } else if (gallery_shots == 10) {
    out += "-multi";
  } else {
    out += "-shots" + std::to_string(gallery_shots);
  }
  out += direction == Direction::kInfraredToVisible ? "-ir2vis" : "-vis2ir";
  return out;
}

ProtocolSpec parse_protocol(std::string_view token) {
  ProtocolSpec spec;
  if (token == "single-shot") return spec;
  if (token == "multi-shot") {
    spec.gallery_shots = 10;
    return spec;
  }
  std::vector<std::string> parts;
  std::stringstream ss{std::string(token)};
  for (std::string part; std::getline(ss, part, '-');) parts.push_back(part);
  if (parts.size() < 2 || parts.size() > 3) {
    throw ConfigError("protocol '" + std::string(token) + "' must look like all-single or indoor-multi-vis2ir");
  }
  if (parts[0] == "all") {
    spec.search_mode = SearchMode::kAll;
  } else if (parts[0] == "indoor") {
    spec.search_mode = SearchMode::kIndoor;
  } else {
    throw ConfigError("protocol search mode must be all or indoor, got '" + parts[0] + "'");
  }
  if (parts[1] == "single") {
    spec.gallery_shots = 1;
  } else if (parts[1] == "multi") {
    spec.gallery_shots = 10;
  } else if (parts[1].rfind("shots", 0) == 0 && parts[1].size() > 5) {
    spec.gallery_shots = std::stoi(parts[1].substr(5));
    if (spec.gallery_shots < 1) throw ConfigError("protocol gallery shots must be >= 1");
  } else {
    throw ConfigError("protocol gallery setting must be single or multi, got '" + parts[1] + "'");
  }
  if (parts.size() == 3) {
    if (parts[2] == "ir2vis") {
      spec.direction = Direction::kInfraredToVisible;
    } else if (parts[2] == "vis2ir") {
      spec.direction = Direction::kVisibleToInfrared;
    } else {
      throw ConfigError("protocol direction must be ir2vis or vis2ir, got '" + parts[2] + "'");
    }
  }
  return spec;
}

RetrievalSplit protocol_split(const DatasetManifest& manifest, const ProtocolSpec& protocol) {
  if (protocol.gallery_shots < 1) throw ConfigError("gallery_shots must be >= 1");
  const Modality qm = protocol.query_modality();
  const Modality gm = protocol.gallery_modality();

  RetrievalSplit split;
  std::map<int, std::vector<std::size_t>> candidates;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.modality == qm) split.query.push_back(i);
    if (r.modality == gm && (protocol.search_mode == SearchMode::kAll || r.location == Location::kIndoor)) {
      candidates[r.identity].push_back(i);
    }
  }
  std::set<int> identities;
  for (const auto& r : manifest.records) identities.insert(r.identity);

  std::mt19937_64 rng = seeded(protocol.trial_seed, 0x47414c4c);  // "GALL"
  for (int id : identities) {
    const auto it = candidates.find(id);
    if (it == candidates.end()) {
      split.excluded_identities.push_back(id);
      continue;
    }
    for (std::size_t rec : draw(it->second, protocol.gallery_shots, rng)) split.gallery.push_back(rec);
  }
  split.empty_gallery = split.gallery.empty();
  return split;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  using nlohmann::json;
  const bool has_pixels = !manifest.images.empty();
  std::filesystem::path blob = path;
  blob.replace_extension(".images.bin");

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  json header = {{"format", kManifestFormat},
                 {"version", kManifestVersion},
                 {"num_identities", manifest.num_identities},
                 {"split", to_string(manifest.split)},
                 {"image_shape", {manifest.image_shape.height, manifest.image_shape.width, manifest.image_shape.channels}},
                 {"num_records", manifest.records.size()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    std::string ref = r.image_ref;
    if (has_pixels && ref.rfind("inline:", 0) == 0) ref = "blob:" + blob.filename().string() + "#" + std::to_string(i);
    json line = {{"sample_id", r.sample_id},   {"identity", r.identity},
                 {"modality", to_string(r.modality)}, {"camera_id", r.camera_id},
                 {"location_tag", to_string(r.location)}, {"image_ref", ref}};
    out << line.dump() << '\n';
  }

  if (has_pixels) {
    std::ofstream bin(blob, std::ios::binary);
    if (!bin) throw DataError("cannot write image blob " + blob.string());
    std::vector<float> buf;
    for (const auto& img : manifest.images) {
      buf.assign(img.data(), img.data() + img.size());
      bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + path.string() + " is empty");

  DatasetManifest manifest;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != kManifestFormat) throw DataError("not a csdn manifest: " + path.string());
    manifest.num_identities = header.at("num_identities").get<int>();
    manifest.split = parse_split(header.at("split").get<std::string>());
    const auto& shape = header.at("image_shape");
    manifest.image_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
  } catch (const json::exception& e) {
    throw DataError("manifest header of " + path.string() + ": " + e.what());
  }

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SampleRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.identity = j.at("identity").get<int>();
      const auto modality = j.at("modality").get<std::string>();
      if (modality != "visible" && modality != "infrared") throw DataError("unknown modality '" + modality + "'");
      r.modality = parse_modality(modality);
      r.camera_id = j.at("camera_id").get<int>();
      r.location = parse_location(j.at("location_tag").get<std::string>());
      r.image_ref = j.at("image_ref").get<std::string>();
      manifest.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }

  // Materialize pixels.
  const auto base = path.parent_path();
  const auto& shape = manifest.image_shape;
  const std::size_t floats = static_cast<std::size_t>(shape.channels) * shape.pixels();
  std::map<std::string, std::ifstream> blobs;
  std::vector<float> buf(floats);
  for (const auto& r : manifest.records) {
    if (r.image_ref.rfind("blob:", 0) == 0) {
      const auto hash = r.image_ref.rfind('#');
      if (hash == std::string::npos) throw DataError("blob reference without index: " + r.image_ref);
      const std::string file = r.image_ref.substr(5, hash - 5);
      const std::size_t k = std::stoull(r.image_ref.substr(hash + 1));
      auto& stream = blobs[file];
      if (!stream.is_open()) {
        stream.open(base / file, std::ios::binary);
        if (!stream) throw DataError("cannot open image blob " + (base / file).string());
      }
      stream.seekg(static_cast<std::streamoff>(k * floats * sizeof(float)));
      stream.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(floats * sizeof(float)));
      if (!stream) throw DataError("image blob " + file + " is truncated at entry " + std::to_string(k));
      Image img(shape.channels, shape.pixels());
      for (std::size_t i = 0; i < floats; ++i) img.data()[i] = buf[i];
      manifest.images.push_back(std::move(img));
    } else if (r.image_ref.rfind("inline:", 0) == 0) {
      throw DataError("record " + r.sample_id + " references an in-memory image; re-save the manifest");
    } else {
      std::filesystem::path p = r.image_ref;
      if (p.is_relative()) p = base / p;
      manifest.images.push_back(load_image_file(p, shape));
    }
  }
  manifest.validate();
  return manifest;
}

double latent_centroid_accuracy(const DatasetManifest& manifest) {
  const Matrix& z = manifest.sample_latents;
  if (z.rows() != static_cast<Eigen::Index>(manifest.records.size()) || z.rows() == 0) {
    throw DataError("manifest has no latent vectors");
  }
  Matrix centroids = Matrix::Zero(manifest.num_identities, z.cols());
  Vector counts = Vector::Zero(manifest.num_identities);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const int id = manifest.records[i].identity;
    centroids.row(id) += z.row(static_cast<Eigen::Index>(i));
    counts(id) += 1.0;
  }
  for (int id = 0; id < manifest.num_identities; ++id) centroids.row(id) /= std::max(counts(id), 1.0);

  int correct = 0;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - z.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm().minCoeff(&best);
    correct += static_cast<int>(best) == manifest.records[i].identity;
  }
  return static_cast<double>(correct) / static_cast<double>(manifest.records.size());
}

}  // namespace csdn::data
