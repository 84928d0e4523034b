#include "ebr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ebr/error.hpp"

namespace ebr {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'E', 'B', 'R', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(std::string_view bytes, std::size_t& pos) {
  if (pos + 8 > bytes.size()) throw CheckpointError("checkpoint truncated");
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + pos, 8);
  pos += 8;
  return v;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

const Tensor& Checkpoint::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw CheckpointError("checkpoint has no tensor '" + std::string(name) + "'");
}

bool Checkpoint::has_tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::string Checkpoint::serialize() const {
  nlohmann::json header;
  header["version"] = kVersion;
  header["model_kind"] = model_kind;
  header["vocab_ref"] = vocab_ref;
  header["hyperparams"] = hyperparams;
  auto& list = header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    if (element_count(t.shape) != t.data.size())
      throw CheckpointError("tensor '" + t.name + "' shape does not match its data");
    list.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string head = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, head.size());
  out += head;
  for (const auto& t : tensors) {
    const std::size_t bytes = t.data.size() * sizeof(double);
    put_u64(out, bytes);
    out.append(reinterpret_cast<const char*>(t.data.data()), bytes);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t pos = sizeof kMagic;
  const std::uint64_t head_len = get_u64(bytes, pos);
  if (pos + head_len > bytes.size()) throw CheckpointError("checkpoint header truncated");

  Checkpoint ck;
  try {
    auto header = nlohmann::json::parse(bytes.substr(pos, head_len));
    pos += head_len;
    if (header.at("version").get<int>() != kVersion)
      throw CheckpointError("unsupported checkpoint version " + header.at("version").dump());
    ck.model_kind = header.at("model_kind").get<std::string>();
    ck.vocab_ref = header.at("vocab_ref").get<std::string>();
    ck.hyperparams = header.at("hyperparams");
    for (const auto& entry : header.at("tensors")) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const std::uint64_t len = get_u64(bytes, pos);
      const std::size_t n = element_count(t.shape);
      if (len != n * sizeof(double) || pos + len > bytes.size())
        throw CheckpointError("tensor '" + t.name + "' has inconsistent length");
      t.data.resize(n);
      std::memcpy(t.data.data(), bytes.data() + pos, len);
      pos += len;
      ck.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::string Checkpoint::peek_kind(const std::filesystem::path& path) { return load(path).model_kind; }

}  // namespace ebr
