#include "fisherscope/blobfile.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "fisherscope/error.hpp"

namespace fisherscope {

namespace {

constexpr const char* kMagic = "FISHERSCOPE";

void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_blob_file(const std::filesystem::path& path, const BlobFile& file) {
  if (file.names.size() != file.blocks.size()) throw InvalidArgument("blob names and blocks differ in count");
  nlohmann::json manifest = file.manifest;
  manifest["blocks"] = nlohmann::json::array();
  std::size_t offset = 0;
  std::string data;
  for (std::size_t i = 0; i < file.blocks.size(); ++i) {
    const Tensor& t = file.blocks[i];
    manifest["blocks"].push_back(
        {{"name", file.names[i]}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    for (double v : t.values()) put_le(data, v);
    offset += 8 * t.size();
  }
  const std::string text = manifest.dump(2) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << kMagic << ' ' << file.kind << ' ' << file.version << '\n' << text.size() << '\n' << text;
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

BlobFile read_blob_file(const std::filesystem::path& path, const std::string& expected_kind,
                        int expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "'" + path.string() + "'";

  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos) throw CorruptFile(where + ": missing header line");
  std::istringstream header(bytes.substr(0, nl1));
  std::string magic, kind;
  int version = -1;
  header >> magic >> kind >> version;
  if (magic != kMagic || kind.empty() || version < 0) throw CorruptFile(where + ": bad header");
  if (kind != expected_kind)
    throw CorruptFile(where + ": holds a " + kind + ", expected a " + expected_kind);
  if (version != expected_version)
    throw VersionMismatch(where + ": format version " + std::to_string(version) + ", this build reads " +
                          std::to_string(expected_version));

  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw CorruptFile(where + ": missing manifest length");
  std::size_t manifest_len = 0;
  try {
    manifest_len = std::stoull(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const std::exception&) {
    throw CorruptFile(where + ": bad manifest length");
  }
  const std::size_t data_start = nl2 + 1 + manifest_len;
  if (data_start > bytes.size()) throw CorruptFile(where + ": truncated manifest");

  BlobFile file;
  file.kind = kind;
  file.version = version;
  try {
    file.manifest = nlohmann::json::parse(bytes.substr(nl2 + 1, manifest_len));
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + data_start;
    const std::size_t avail = bytes.size() - data_start;
    std::size_t expected_end = 0;
    for (const auto& b : file.manifest.at("blocks")) {
      const auto shape = b.at("shape").get<Shape>();
      const auto offset = b.at("offset").get<std::size_t>();
      const auto count = b.at("count").get<std::size_t>();
      if (shape_size(shape) != count) throw CorruptFile(where + ": block shape/count disagree");
      if (offset + 8 * count > avail) throw CorruptFile(where + ": truncated data block");
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = get_le(base + offset + 8 * i);
      file.names.push_back(b.at("name").get<std::string>());
      file.blocks.emplace_back(shape, std::move(values));
      expected_end = std::max(expected_end, offset + 8 * count);
    }
    if (expected_end != avail) throw CorruptFile(where + ": trailing bytes after data blocks");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(where + ": malformed manifest (" + e.what() + ")");
  } catch (const NonFiniteError&) {
    throw CorruptFile(where + ": non-finite values in data block");
  } catch (const InvalidArgument& e) {
    throw CorruptFile(where + ": " + e.what());
  }
  return file;
}

}  // namespace fisherscope
