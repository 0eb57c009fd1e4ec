#include "uret/model.hpp"

#include <cstring>
#include <sstream>

namespace uret {

namespace {

constexpr char kMagic[] = "URETCKPT1\n";

void put_u32(std::string& buf, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

void put_u64(std::string& buf, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

void put_string(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf += s;
}

void put_matrix(std::string& buf, const Mat<double>& m) {
  put_u32(buf, static_cast<uint32_t>(m.rows()));
  put_u32(buf, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      char b[8];
      const double v = m(r, c);
      std::memcpy(b, &v, 8);
      buf.append(b, 8);
    }
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint integrity error: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  Mat<double> matrix() {
    const uint32_t rows = u32();
    const uint32_t cols = u32();
    need(static_cast<size_t>(rows) * cols * 8);
    Mat<double> m(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) {
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        m(r, c) = v;
      }
    return m;
  }
};

void put_section(std::string& payload, const std::vector<std::pair<std::string, Mat<double>>>& items) {
  put_u32(payload, static_cast<uint32_t>(items.size()));
  for (const auto& [name, value] : items) {
    put_string(payload, name);
    put_matrix(payload, value);
  }
}

std::vector<std::pair<std::string, Mat<double>>> read_section(Reader& r) {
  std::vector<std::pair<std::string, Mat<double>>> items;
  const uint32_t n = r.u32();
  items.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    items.emplace_back(std::move(name), r.matrix());
  }
  return items;
}

}  // namespace

void save_checkpoint_file(const std::filesystem::path& path, const CheckpointContent& content) {
  std::string payload;
  put_string(payload, content.config_summary);
  put_u32(payload, static_cast<uint32_t>(content.meta.size()));
  for (const auto& [k, v] : content.meta) {
    put_string(payload, k);
    put_string(payload, v);
  }
  put_section(payload, content.params);
  put_section(payload, content.aux);

  std::string file(kMagic);
  file += payload;
  put_u64(file, fnv1a64(payload.data(), payload.size()));
  write_file_atomic(path, file);
}

CheckpointContent load_checkpoint_file(const std::filesystem::path& path) {
  const std::string file = read_text_file(path);
  const size_t magic_len = sizeof(kMagic) - 1;
  if (file.size() < magic_len + 8 || file.compare(0, magic_len, kMagic) != 0)
    throw DataError("checkpoint integrity error: bad magic in " + path.string());
  const std::string payload = file.substr(magic_len, file.size() - magic_len - 8);
  uint64_t stored;
  std::memcpy(&stored, file.data() + file.size() - 8, 8);
  if (stored != fnv1a64(payload.data(), payload.size()))
    throw DataError("checkpoint integrity error: checksum mismatch in " + path.string());

  Reader r{payload};
  CheckpointContent c;
  c.config_summary = r.str();
  const uint32_t n_meta = r.u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  c.params = read_section(r);
  c.aux = read_section(r);
  if (r.pos != payload.size()) throw DataError("checkpoint integrity error: trailing bytes");
  return c;
}

}  // namespace uret
