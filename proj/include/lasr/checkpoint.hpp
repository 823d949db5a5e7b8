#pragma once

// Checkpoint layout (little-endian):
//   "LASRCKPT"  u32 version  u32 header_bytes  header (JSON)
//   then every tensor of header["tensors"], in order, as rows*cols f32.
// The header carries the ArchSpec, the criterion and the tensor table.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "lasr/features.hpp"
#include "lasr/train.hpp"

namespace lasr {

inline constexpr char kCheckpointMagic[8] = {'L', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const AcousticModel& m) {
  nlohmann::json header;
  header["arch"] = m.net.arch();
  header["criterion"] = to_string(m.criterion);
  header["n_outputs"] = m.net.n_outputs();
  nlohmann::json tensors = nlohmann::json::array();
  auto describe = [&](const ParamSet<float>& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      tensors.push_back({{"name", ps.names[i]}, {"rows", ps.tensors[i].rows()}, {"cols", ps.tensors[i].cols()}});
    }
  };
  describe(m.net.params());
  describe(m.transitions);
  header["tensors"] = tensors;
  const std::string blob = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32_le(os, kCheckpointVersion);
  detail::put_u32_le(os, static_cast<std::uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  auto dump = [&](const ParamSet<float>& ps) {
    for (const auto& t : ps.tensors) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) detail::put_f32_le(os, t(r, c));
      }
    }
  };
  dump(m.net.params());
  dump(m.transitions);
  if (!os) throw DataError(path.string() + ": write failed");
}

inline AcousticModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  const std::string name = path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw DataError(name + ": not a checkpoint file");
  }
  const std::uint32_t version = detail::read_u32_le(bytes.data() + 8);
  if (version != kCheckpointVersion) throw DataError(name + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t header_len = detail::read_u32_le(bytes.data() + 12);
  if (16ull + header_len > bytes.size()) throw DataError(name + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad header: " + e.what());
  }

  AcousticModel m;
  try {
    m.criterion = parse_criterion(header.at("criterion").get<std::string>());
    const ArchSpec arch = arch_from_json(header.at("arch"));
    m.net = Model<float>::with_layout(arch, header.at("n_outputs").get<int>());
    if (m.criterion == CriterionKind::asg) {
      m.transitions.names = {"transitions.trans", "transitions.start"};
      m.transitions.tensors = {MatrixF::Zero(arch.n_labels, arch.n_labels), MatrixF::Zero(1, arch.n_labels)};
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad header: " + e.what());
  } catch (const UsageError& e) {
    throw DataError(name + ": " + e.what());
  }

  std::vector<MatrixF*> slots;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < m.net.params().size(); ++i) {
    slots.push_back(&m.net.params().tensors[i]);
    names.push_back(m.net.params().names[i]);
  }
  for (std::size_t i = 0; i < m.transitions.size(); ++i) {
    slots.push_back(&m.transitions.tensors[i]);
    names.push_back(m.transitions.names[i]);
  }
  const auto& table = header.at("tensors");
  if (table.size() != slots.size()) throw DataError(name + ": tensor count does not match the architecture");
  std::size_t pos = 16 + header_len;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    MatrixF& t = *slots[i];
    if (table[i].at("name") != names[i] || table[i].at("rows") != t.rows() || table[i].at("cols") != t.cols()) {
      throw DataError(name + ": tensor " + names[i] + " does not match the architecture");
    }
    const std::size_t need = 4ull * static_cast<std::size_t>(t.size());
    if (pos + need > bytes.size()) throw DataError(name + ": truncated tensor data");
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c, pos += 4) t(r, c) = detail::read_f32_le(bytes.data() + pos);
    }
  }
  if (pos != bytes.size()) throw DataError(name + ": trailing bytes after tensor data");
  return m;
}

}  // namespace lasr
