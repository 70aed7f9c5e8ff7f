#include "csdn/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "csdn/errors.hpp"

namespace csdn {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'D', 'N', 'C', 'K', 'P', '1'};
constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const std::vector<double>& payload) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* c = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < payload.size() * sizeof(double); ++i) {
    h ^= c[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void append(std::vector<double>& payload, nlohmann::json& dir, const std::string& name, const Matrix& m) {
  dir.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size()}});
  payload.insert(payload.end(), m.data(), m.data() + m.size());
}

Matrix extract(const std::vector<double>& payload, const nlohmann::json& entry) {
  const auto rows = entry.at("rows").get<Eigen::Index>();
  const auto cols = entry.at("cols").get<Eigen::Index>();
  const auto offset = entry.at("offset").get<std::size_t>();
  if (rows < 0 || cols < 0 || offset + static_cast<std::size_t>(rows * cols) > payload.size()) {
    throw CheckpointError("tensor " + entry.at("name").get<std::string>() + " lies outside the payload");
  }
  Matrix m(rows, cols);
  std::copy_n(payload.data() + offset, rows * cols, m.data());
  return m;
}

nlohmann::json state_to_json(const train::RunState& s) {
  nlohmann::json completed = nlohmann::json::array();
  for (auto st : s.completed_stages) completed.push_back(train::to_string(st));
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [k, v] : s.group_hashes) hashes[k] = v;
  return {{"stage", train::to_string(s.stage)},
          {"next_epoch", s.next_epoch},
          {"stage_finished", s.stage_finished},
          {"rng_state", s.rng_state},
          {"adam_step", s.adam.step},
          {"completed_stages", completed},
          {"group_hashes", hashes}};
}

struct Archive {
  nlohmann::json header;
  std::vector<double> payload;
};

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw CheckpointError("not a checkpoint: " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len > (1ULL << 32)) throw CheckpointError("corrupt checkpoint header: " + path.string());
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header: " + path.string());

  Archive a;
  try {
    a.header = nlohmann::json::parse(header);
    if (a.header.at("format_version").get<int>() != kFormatVersion) {
      throw CheckpointError("unsupported checkpoint version in " + path.string());
    }
    a.payload.resize(a.header.at("payload_size").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  in.read(reinterpret_cast<char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size() * sizeof(double)));
  std::uint64_t checksum = 0;
  in.read(reinterpret_cast<char*>(&checksum), sizeof(checksum));
  if (!in) throw CheckpointError("truncated checkpoint payload: " + path.string());
  if (checksum != fnv1a(a.payload)) throw CheckpointError("checkpoint checksum mismatch: " + path.string());
  return a;
}

train::RunState restore_state(const Archive& a) {
  train::RunState s;
  try {
    const auto& j = a.header.at("run_state");
    s.stage = train::parse_stage(j.at("stage").get<std::string>());
    s.next_epoch = j.at("next_epoch").get<int>();
    s.stage_finished = j.at("stage_finished").get<bool>();
    s.rng_state = j.at("rng_state").get<std::string>();
    s.adam.step = j.at("adam_step").get<std::int64_t>();
    for (const auto& st : j.at("completed_stages")) s.completed_stages.push_back(train::parse_stage(st.get<std::string>()));
    for (const auto& [k, v] : j.at("group_hashes").items()) s.group_hashes[k] = v.get<std::uint64_t>();
    for (const auto& entry : a.header.at("adam_first")) s.adam.first_moment.push_back(extract(a.payload, entry));
    for (const auto& entry : a.header.at("adam_second")) s.adam.second_moment.push_back(extract(a.payload, entry));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt run state: ") + e.what());
  } catch (const InputError& e) {
    throw CheckpointError(std::string("corrupt run state: ") + e.what());
  }
  return s;
}

void restore_groups(const Archive& a, Model& model, const std::vector<std::string>& only) {
  const auto& groups = a.header.at("groups");
  for (const auto& [group, entries] : groups.items()) {
    if (!only.empty() && std::find(only.begin(), only.end(), group) == only.end()) continue;
    if (!model.has_group(group)) {
      throw CheckpointError("checkpoint group '" + group + "' does not exist in the configured model");
    }
    auto tensors = model.tensors(group);
    if (tensors.size() != entries.size()) {
      throw CheckpointError("group '" + group + "' holds " + std::to_string(entries.size()) +
                            " tensors, the configured model expects " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& e = entries[i];
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      if (e.at("name").get<std::string>() != tensors[i].name || rows != tensors[i].value->rows() ||
          cols != tensors[i].value->cols()) {
        throw CheckpointError("shape mismatch for " + group + "/" + tensors[i].name + ": checkpoint has (" +
                              std::to_string(rows) + ", " + std::to_string(cols) + "), model expects (" +
                              std::to_string(tensors[i].value->rows()) + ", " +
                              std::to_string(tensors[i].value->cols()) + ")");
      }
      *tensors[i].value = extract(a.payload, e);
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const train::RunState& state,
                     const nlohmann::json& metadata) {
  std::vector<double> payload;
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& g : model.present_groups()) {
    nlohmann::json dir = nlohmann::json::array();
    for (auto& t : model.tensors(g)) append(payload, dir, t.name, *t.value);
    groups[g] = dir;
  }
  nlohmann::json first = nlohmann::json::array();
  nlohmann::json second = nlohmann::json::array();
  for (std::size_t i = 0; i < state.adam.first_moment.size(); ++i) {
    append(payload, first, "m" + std::to_string(i), state.adam.first_moment[i]);
    append(payload, second, "v" + std::to_string(i), state.adam.second_moment[i]);
  }
  nlohmann::json header = {{"format_version", kFormatVersion},
                           {"model_config", model.config},
                           {"groups", groups},
                           {"adam_first", first},
                           {"adam_second", second},
                           {"run_state", state_to_json(state)},
                           {"metadata", metadata},
                           {"payload_size", payload.size()}};
  const std::string text = header.dump();

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    const std::uint64_t len = text.size();
    const std::uint64_t checksum = fnv1a(payload);
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  ModelConfig config;
  try {
    config = a.header.at("model_config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt model config in " + path.string() + ": " + e.what());
  }
  Checkpoint c{Model::create(config), restore_state(a), a.header.value("metadata", nlohmann::json::object())};
  restore_groups(a, c.model, {});
  return c;
}

train::RunState load_checkpoint_into(const std::filesystem::path& path, Model& model,
                                     const std::vector<std::string>& groups) {
  const Archive a = read_archive(path);
  restore_groups(a, model, groups);
  return restore_state(a);
}

}  // namespace csdn
