#include "cmcr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <json.hpp>

#include "cmcr/error.hpp"

namespace cmcr {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
}

std::uint32_t get_u32(const std::vector<char>& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ProjectorParams& params, std::uint64_t step,
                     const std::string& config_hash) {
  ProjectorParams copy = params;
  const auto tensors = checkpoint_tensors(copy);
  nlohmann::json header;
  header["format"] = "CMCR-CKPT";
  header["version"] = 1;
  header["dims"] = {params.dims.in, params.dims.hidden, params.dims.out};
  header["final_relu"] = params.final_relu;
  header["step"] = step;
  header["config_hash"] = config_hash;
  auto& table = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, values] : tensors) {
    table.push_back({{"name", name}, {"size", values.size()}});
  }
  const std::string header_text = header.dump();

  std::string blob(kCkptMagic, sizeof(kCkptMagic));
  put_u32(blob, static_cast<std::uint32_t>(header_text.size()));
  blob += header_text;
  for (const auto& [name, values] : tensors) {
    for (const double v : values) {
      put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) {
    throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  const std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < sizeof(kCkptMagic) || std::memcmp(raw.data(), kCkptMagic, sizeof(kCkptMagic)) != 0) {
    throw Error(ErrorCode::MagicMismatch, path.string() + " is not a CMCR-CKPT v1 file");
  }
  if (raw.size() < 12) {
    throw Error(ErrorCode::TruncatedFile, path.string());
  }
  const std::uint32_t header_len = get_u32(raw, 8);
  if (raw.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw Error(ErrorCode::TruncatedFile, path.string() + ": header cut short");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.begin() + 12, raw.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidMatrix, path.string() + ": bad header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    const auto dims = header.at("dims");
    ckpt.params.dims = {dims.at(0).get<std::size_t>(), dims.at(1).get<std::size_t>(), dims.at(2).get<std::size_t>()};
    ckpt.params.final_relu = header.at("final_relu").get<bool>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.config_hash = header.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidMatrix, path.string() + ": bad header: " + e.what());
  }
  // Allocate shapes, then fill in declared order.
  const bool final_relu = ckpt.params.final_relu;
  ckpt.params = init_projector(ckpt.params.dims, 0, final_relu);
  const auto tensors = checkpoint_tensors(ckpt.params);
  const auto& table = header.at("tensors");
  if (table.size() != tensors.size()) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": unexpected tensor count");
  }
  std::size_t offset = 12 + header_len;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const auto& [name, values] = tensors[t];
    if (table[t].at("name").get<std::string>() != name || table[t].at("size").get<std::size_t>() != values.size()) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": tensor " + name + " does not match dims");
    }
    if (raw.size() < offset + 4 * values.size()) {
      throw Error(ErrorCode::TruncatedFile, path.string() + ": payload cut short in " + name);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<double>(std::bit_cast<float>(get_u32(raw, offset + 4 * i)));
    }
    offset += 4 * values.size();
  }
  if (offset != raw.size()) {
    throw Error(ErrorCode::InvalidMatrix, path.string() + ": trailing bytes");
  }
  return ckpt;
}

}  // namespace cmcr
