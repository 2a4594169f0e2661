#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssub/data.hpp"

namespace ssub {

// ---- binary containers -------------------------------------------------------
//
// Checkpoints and dataset files share one container layout (little-endian):
//   magic           8 bytes ("SSUBCKPT" or "SSUBDATA")
//   version         u32 (currently 1)
//   manifest_len    u32, then manifest bytes: "key=value\n" lines sorted by key
//   tensor records until 4 bytes before EOF:
//     name_len u32, name bytes, rank u32, dims u32 each, payload f32 each
//   crc32           u32 over every preceding byte
//
// Writing the same content twice produces identical bytes; loading verifies
// magic, version and checksum and round-trips tensors bit-exactly.

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Container {
  std::map<std::string, std::string> manifest;
  std::vector<NamedTensor> tensors;
};

inline constexpr char kCheckpointMagic[] = "SSUBCKPT";
inline constexpr char kDatasetMagic[] = "SSUBDATA";

void save_container(const std::string& path, const std::string& magic,
                    const std::vector<NamedTensor>& tensors,
                    const std::map<std::string, std::string>& manifest);
Container load_container(const std::string& path, const std::string& expected_magic);

void checkpoint_save(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::map<std::string, std::string>& manifest);
Container checkpoint_load(const std::string& path);

void dataset_save(const std::string& path, const Dataset& ds,
                  const std::map<std::string, std::string>& extra_manifest = {});
Dataset dataset_load(const std::string& path);

uint32_t crc32_bytes(const unsigned char* data, size_t len);

// ---- text output ---------------------------------------------------------------

// Shortest round-trippable decimal formatting used by every CSV writer, so
// rerunning a deterministic pipeline reproduces files byte for byte.
std::string fmt_g(double v);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void flush();

 private:
  std::string path_;
  std::string buf_;
  size_t cols_;
};

// Writes `key=value` lines sorted by key; the convention for run manifests.
void write_manifest(const std::string& path, const std::map<std::string, std::string>& entries);

// ---- images ----------------------------------------------------------------------

// 8-bit binary PGM (P5); values are clipped to [0,1] and scaled by 255.
void write_pgm(const std::string& path, const Tensor& image);

// Horizontal/vertical montage with `pad` gray pixels between tiles.
Tensor tile_grid(const std::vector<Tensor>& images, int cols, int pad = 2, float pad_value = 0.25f);

}  // namespace ssub
