#include "ssub/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace ssub {

uint32_t crc32_bytes(const unsigned char* data, size_t len) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace {

void append_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFFu));
  out.push_back(static_cast<char>((v >> 8) & 0xFFu));
  out.push_back(static_cast<char>((v >> 16) & 0xFFu));
  out.push_back(static_cast<char>((v >> 24) & 0xFFu));
}

uint32_t take_u32(const std::string& buf, size_t& pos, const std::string& path) {
  if (pos + 4 > buf.size()) throw DataError("truncated container: " + path);
  uint32_t v = 0;
  std::memcpy(&v, buf.data() + pos, 4);  // container and host are both little-endian
  pos += 4;
  return v;
}

constexpr uint32_t kContainerVersion = 1;

}  // namespace

void save_container(const std::string& path, const std::string& magic,
                    const std::vector<NamedTensor>& tensors,
                    const std::map<std::string, std::string>& manifest) {
  if (magic.size() != 8) throw ShapeError("container magic must be 8 bytes");
  std::string out;
  out += magic;
  append_u32(out, kContainerVersion);
  std::string mtext;
  for (const auto& [k, v] : manifest) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw DataError("manifest keys/values must not contain '=' (key) or newlines");
    mtext += k + "=" + v + "\n";
  }
  append_u32(out, static_cast<uint32_t>(mtext.size()));
  out += mtext;
  for (const NamedTensor& nt : tensors) {
    append_u32(out, static_cast<uint32_t>(nt.name.size()));
    out += nt.name;
    const Shape& s = nt.tensor.shape();
    append_u32(out, static_cast<uint32_t>(s.size()));
    for (int d : s) append_u32(out, static_cast<uint32_t>(d));
    const size_t bytes = sizeof(float) * static_cast<size_t>(nt.tensor.size());
    const size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, nt.tensor.data(), bytes);
  }
  append_u32(out, crc32_bytes(reinterpret_cast<const unsigned char*>(out.data()), out.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path);
}

Container load_container(const std::string& path, const std::string& expected_magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open container: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 + 4 + 4 + 4) throw DataError("container too short: " + path);
  if (buf.compare(0, 8, expected_magic) != 0)
    throw DataError("bad container magic in " + path + " (expected " + expected_magic + ")");
  const uint32_t stored_crc =
      static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4])) |
      (static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 3])) << 8) |
      (static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 2])) << 16) |
      (static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 1])) << 24);
  const uint32_t actual_crc =
      crc32_bytes(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (stored_crc != actual_crc) throw DataError("container checksum mismatch: " + path);
  size_t pos = 8;
  const uint32_t version = take_u32(buf, pos, path);
  if (version != kContainerVersion)
    throw DataError("unsupported container version " + std::to_string(version) + " in " + path);
  const uint32_t mlen = take_u32(buf, pos, path);
  if (pos + mlen > buf.size() - 4) throw DataError("truncated container manifest: " + path);
  Container c;
  {
    size_t line_start = pos;
    const size_t mend = pos + mlen;
    while (line_start < mend) {
      size_t nl = buf.find('\n', line_start);
      if (nl == std::string::npos || nl >= mend) throw DataError("malformed manifest line: " + path);
      const std::string line = buf.substr(line_start, nl - line_start);
      const size_t eq = line.find('=');
      if (eq == std::string::npos) throw DataError("malformed manifest line: " + path);
      c.manifest[line.substr(0, eq)] = line.substr(eq + 1);
      line_start = nl + 1;
    }
    pos = mend;
  }
  const size_t records_end = buf.size() - 4;
  while (pos < records_end) {
    const uint32_t name_len = take_u32(buf, pos, path);
    if (pos + name_len > records_end) throw DataError("truncated tensor name: " + path);
    std::string name = buf.substr(pos, name_len);
    pos += name_len;
    const uint32_t rank = take_u32(buf, pos, path);
    if (rank == 0 || rank > 8) throw DataError("invalid tensor rank in container: " + path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = take_u32(buf, pos, path);
      if (d == 0 || d > (1u << 30)) throw DataError("invalid tensor dimension in container: " + path);
      shape[i] = static_cast<int>(d);
    }
    const size_t count = static_cast<size_t>(shape_size(shape));
    if (pos + 4 * count > records_end) throw DataError("truncated tensor payload: " + path);
    Tensor t(shape);
    std::memcpy(t.data(), buf.data() + pos, 4 * count);
    pos += 4 * count;
    c.tensors.push_back({std::move(name), std::move(t)});
  }
  if (pos != records_end) throw DataError("trailing bytes in container: " + path);
  return c;
}

void checkpoint_save(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::map<std::string, std::string>& manifest) {
  save_container(path, kCheckpointMagic, tensors, manifest);
}

Container checkpoint_load(const std::string& path) { return load_container(path, kCheckpointMagic); }

void dataset_save(const std::string& path, const Dataset& ds,
                  const std::map<std::string, std::string>& extra_manifest) {
  ds.validate();
  const int n = ds.count(), h = ds.height, w = ds.width;
  if (n == 0) throw DataError("refusing to save an empty dataset");
  std::map<std::string, std::string> manifest = extra_manifest;
  manifest["count"] = std::to_string(n);
  manifest["height"] = std::to_string(h);
  manifest["width"] = std::to_string(w);
  manifest["name"] = ds.name;
  manifest["sparsity"] = fmt_g(ds.sparsity);
  manifest["split"] = ds.split_tag;
  manifest["has_truth"] = ds.has_truth() ? "1" : "0";
  manifest["has_labels"] = ds.has_labels() ? "1" : "0";
  std::vector<NamedTensor> tensors;
  const auto stack = [&](const std::vector<Tensor>& imgs) {
    Tensor t({n, h, w});
    for (int i = 0; i < n; ++i)
      std::memcpy(t.data() + static_cast<size_t>(i) * h * w, imgs[static_cast<size_t>(i)].data(),
                  sizeof(float) * static_cast<size_t>(h) * w);
    return t;
  };
  tensors.push_back({"values", stack(ds.values)});
  tensors.push_back({"masks", stack(ds.masks)});
  if (ds.has_truth()) tensors.push_back({"truth", stack(ds.truth)});
  if (ds.has_labels()) {
    Tensor lt({n});
    for (int i = 0; i < n; ++i) lt[i] = static_cast<float>(ds.labels[static_cast<size_t>(i)]);
    tensors.push_back({"labels", std::move(lt)});
  }
  save_container(path, kDatasetMagic, tensors, manifest);
}

Dataset dataset_load(const std::string& path) {
  Container c = load_container(path, kDatasetMagic);
  const auto need = [&](const char* key) {
    auto it = c.manifest.find(key);
    if (it == c.manifest.end()) throw DataError("dataset manifest missing '" + std::string(key) + "': " + path);
    return it->second;
  };
  Dataset ds;
  const int n = std::stoi(need("count"));
  ds.height = std::stoi(need("height"));
  ds.width = std::stoi(need("width"));
  ds.name = need("name");
  ds.sparsity = std::stod(need("sparsity"));
  ds.split_tag = need("split");
  const auto find_tensor = [&](const std::string& name) -> const Tensor* {
    for (const NamedTensor& nt : c.tensors)
      if (nt.name == name) return &nt.tensor;
    return nullptr;
  };
  const auto unstack = [&](const Tensor& t, std::vector<Tensor>& out) {
    require_shape(t.rank() == 3 && t.dim(0) == n && t.dim(1) == ds.height && t.dim(2) == ds.width,
                  "dataset tensor has unexpected shape in " + path);
    for (int i = 0; i < n; ++i) {
      Tensor img({ds.height, ds.width});
      std::memcpy(img.data(), t.data() + static_cast<size_t>(i) * ds.height * ds.width,
                  sizeof(float) * static_cast<size_t>(ds.height) * ds.width);
      out.push_back(std::move(img));
    }
  };
  const Tensor* values = find_tensor("values");
  const Tensor* masks = find_tensor("masks");
  if (!values || !masks) throw DataError("dataset container missing values/masks: " + path);
  unstack(*values, ds.values);
  unstack(*masks, ds.masks);
  if (need("has_truth") == "1") {
    const Tensor* truth = find_tensor("truth");
    if (!truth) throw DataError("dataset container missing truth: " + path);
    unstack(*truth, ds.truth);
  }
  if (need("has_labels") == "1") {
    const Tensor* labels = find_tensor("labels");
    if (!labels || labels->size() != n) throw DataError("dataset container missing labels: " + path);
    for (int i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>((*labels)[i]));
  }
  ds.validate();
  return ds;
}

// ---- text output ------------------------------------------------------------------

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), cols_(header.size()) {
  for (size_t i = 0; i < header.size(); ++i) buf_ += (i ? "," : "") + header[i];
  buf_ += "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != cols_)
    throw ShapeError("CSV row has " + std::to_string(cells.size()) + " cells, expected " +
                     std::to_string(cols_));
  for (size_t i = 0; i < cells.size(); ++i) buf_ += (i ? "," : "") + cells[i];
  buf_ += "\n";
}

void CsvWriter::flush() {
  std::ofstream f(path_, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path_);
  f << buf_;
  if (!f) throw DataError("write failed: " + path_);
}

void write_manifest(const std::string& path, const std::map<std::string, std::string>& entries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  for (const auto& [k, v] : entries) f << k << "=" << v << "\n";
  if (!f) throw DataError("write failed: " + path);
}

// ---- images ------------------------------------------------------------------------

void write_pgm(const std::string& path, const Tensor& image) {
  require_shape(image.rank() == 2, "write_pgm expects a (H,W) tensor, got " + shape_str(image.shape()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << "P5\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(image.dim(1)));
  for (int y = 0; y < image.dim(0); ++y) {
    for (int x = 0; x < image.dim(1); ++x) {
      const float v = std::min(1.0f, std::max(0.0f, image[y * image.dim(1) + x]));
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw DataError("write failed: " + path);
}

Tensor tile_grid(const std::vector<Tensor>& images, int cols, int pad, float pad_value) {
  if (images.empty()) throw ShapeError("tile_grid needs at least one image");
  if (cols <= 0) throw ShapeError("tile_grid needs a positive column count");
  const int h = images[0].dim(0), w = images[0].dim(1);
  for (const Tensor& t : images)
    require_shape(t.rank() == 2 && t.dim(0) == h && t.dim(1) == w,
                  "tile_grid images must share one (H,W) shape");
  const int n = static_cast<int>(images.size());
  const int rows = (n + cols - 1) / cols;
  Tensor out = Tensor::full({rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad}, pad_value);
  const int ow = out.dim(1);
  for (int i = 0; i < n; ++i) {
    const int r = i / cols, c = i % cols;
    const int y0 = pad + r * (h + pad), x0 = pad + c * (w + pad);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out[(y0 + y) * ow + (x0 + x)] = images[static_cast<size_t>(i)][y * w + x];
  }
  return out;
}

}  // namespace ssub
