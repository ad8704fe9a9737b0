#include "usersim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "usersim/errors.hpp"

namespace usersim {

namespace {
static_assert(sizeof(double) == 8);

void put_u64_le(std::ofstream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto header = ckpt.header;
  header["n_weights"] = ckpt.weights.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  for (double w : ckpt.weights) put_u64_le(out, std::bit_cast<std::uint64_t>(w));
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty checkpoint " + path.string());
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("bad checkpoint header in " + path.string() + ": " + e.what(), "header");
  }
  if (!ckpt.header.contains("n_weights")) {
    throw ValidationError("checkpoint header lacks n_weights", "n_weights");
  }
  const auto n = ckpt.header["n_weights"].get<std::size_t>();
  std::vector<unsigned char> buf(n * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw ValidationError("truncated checkpoint " + path.string(), "weights");
  }
  ckpt.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ckpt.weights[i] = std::bit_cast<double>(get_u64_le(buf.data() + 8 * i));
  }
  ckpt.header.erase("n_weights");
  return ckpt;
}

}  // namespace usersim
