#include "doctest.h"

#include "ssub/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace ssub;

namespace {

struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    static int counter = 0;
    dir = std::filesystem::temp_directory_path() /
          ("ssub-io-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
  }
  ~TempDir() { std::filesystem::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> sample_tensors() {
  SeededRng rng(3);
  return {{"alpha", rng.gaussian_tensor({2, 3})}, {"beta", rng.gaussian_tensor({4})}};
}

}  // namespace

TEST_CASE("container: tensors and manifest round-trip bit-exactly") {
  TempDir td;
  const std::string p = td.path("a.ssc");
  std::vector<NamedTensor> ts = sample_tensors();
  checkpoint_save(p, ts, {{"seed", "7"}, {"note", "x"}});
  Container c = checkpoint_load(p);
  CHECK(c.manifest.at("seed") == "7");
  CHECK(c.manifest.at("note") == "x");
  REQUIRE(c.tensors.size() == 2);
  CHECK(c.tensors[0].name == "alpha");
  CHECK(c.tensors[0].tensor.shape() == Shape{2, 3});
  for (size_t k = 0; k < 2; ++k)
    for (int i = 0; i < ts[k].tensor.size(); ++i)
      CHECK(c.tensors[k].tensor[i] == ts[k].tensor[i]);
}

TEST_CASE("container: save-load-save produces byte-identical files") {
  TempDir td;
  const std::string p1 = td.path("a.ssc"), p2 = td.path("b.ssc");
  std::vector<NamedTensor> ts = sample_tensors();
  checkpoint_save(p1, ts, {{"k", "v"}});
  Container c = checkpoint_load(p1);
  checkpoint_save(p2, c.tensors, c.manifest);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("container: empty tensor list is a valid file") {
  TempDir td;
  const std::string p = td.path("empty.ssc");
  checkpoint_save(p, {}, {{"only", "manifest"}});
  Container c = checkpoint_load(p);
  CHECK(c.tensors.empty());
  CHECK(c.manifest.at("only") == "manifest");
}

TEST_CASE("container: corrupted payload fails the checksum") {
  TempDir td;
  const std::string p = td.path("bad.ssc");
  checkpoint_save(p, sample_tensors(), {});
  std::vector<unsigned char> bytes = slurp(p);
  bytes[bytes.size() / 2] ^= 0x40;
  spit(p, bytes);
  CHECK_THROWS_WITH_AS(checkpoint_load(p), doctest::Contains("checksum"), DataError);
}

TEST_CASE("container: wrong magic and wrong version are distinct errors") {
  TempDir td;
  const std::string p = td.path("x.ssc");
  checkpoint_save(p, {}, {});
  SUBCASE("dataset magic rejected by checkpoint_load") {
    CHECK_THROWS_WITH_AS(load_container(p, kDatasetMagic), doctest::Contains("magic"), DataError);
  }
  SUBCASE("future version rejected") {
    std::vector<unsigned char> bytes = slurp(p);
    bytes[8] = 9;  // version u32 little-endian follows the 8-byte magic
    // Recompute the trailer so only the version check can fire.
    const uint32_t crc = crc32_bytes(bytes.data(), bytes.size() - 4);
    for (int i = 0; i < 4; ++i)
      bytes[bytes.size() - 4 + static_cast<size_t>(i)] =
          static_cast<unsigned char>((crc >> (8 * i)) & 0xff);
    spit(p, bytes);
    CHECK_THROWS_WITH_AS(checkpoint_load(p), doctest::Contains("version"), DataError);
  }
  SUBCASE("truncated file") {
    std::vector<unsigned char> bytes = slurp(p);
    bytes.resize(6);
    spit(p, bytes);
    CHECK_THROWS_AS(checkpoint_load(p), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(checkpoint_load(td.path("absent.ssc")), DataError);
  }
}

TEST_CASE("container: golden header bytes are pinned") {
  // Format stability check: the first 16 bytes of an empty checkpoint are the
  // magic, version 1 and a zero-length manifest.
  TempDir td;
  const std::string p = td.path("golden.ssc");
  checkpoint_save(p, {}, {});
  std::vector<unsigned char> bytes = slurp(p);
  const std::vector<unsigned char> want = {'S', 'S', 'U', 'B', 'C', 'K', 'P', 'T',
                                           1, 0, 0, 0, 0, 0, 0, 0};
  REQUIRE(bytes.size() == 20);  // header + crc32 trailer
  CHECK(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 16) == want);
  // CRC over the 16-byte header, little-endian trailer.
  const uint32_t crc = crc32_bytes(bytes.data(), 16);
  for (int i = 0; i < 4; ++i)
    CHECK(bytes[16 + static_cast<size_t>(i)] ==
          static_cast<unsigned char>((crc >> (8 * i)) & 0xff));
}

TEST_CASE("container: manifest keys come back sorted in the file") {
  TempDir td;
  const std::string p = td.path("sorted.ssc");
  checkpoint_save(p, {}, {{"zeta", "1"}, {"alpha", "2"}, {"mid", "3"}});
  std::vector<unsigned char> bytes = slurp(p);
  std::string text(bytes.begin() + 16, bytes.end() - 4);
  CHECK(text == "alpha=2\nmid=3\nzeta=1\n");
}

TEST_CASE("crc32 matches the standard test vector") {
  // IEEE 802.3 CRC-32 of "123456789".
  const unsigned char v[] = "123456789";
  CHECK(crc32_bytes(v, 9) == 0xCBF43926u);
  CHECK(crc32_bytes(v, 0) == 0u);
}

TEST_CASE("dataset container: full round trip preserves everything") {
  TempDir td;
  Dataset ds;
  ds.height = 2;
  ds.width = 2;
  ds.name = "unit";
  ds.sparsity = 0.5;
  ds.split_tag = "train";
  ds.values = {Tensor({2, 2}, {1, 0, 0, 0.5f}), Tensor({2, 2}, {0, 0.25f, 0, 0})};
  ds.masks = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 2}, {0, 1, 0, 0})};
  ds.truth = {Tensor({2, 2}, {1, 2, 3, 0.5f}), Tensor({2, 2}, {4, 0.25f, 5, 6})};
  ds.labels = {3, 8};
  const std::string p = td.path("d.ssd");
  dataset_save(p, ds, {{"origin", "unit-test"}});
  Dataset back = dataset_load(p);
  CHECK(back.height == 2);
  CHECK(back.width == 2);
  CHECK(back.name == "unit");
  CHECK(back.sparsity == doctest::Approx(0.5));
  CHECK(back.split_tag == "train");
  CHECK(back.labels == ds.labels);
  REQUIRE(back.count() == 2);
  for (int i = 0; i < 2; ++i)
    for (int pdx = 0; pdx < 4; ++pdx) {
      CHECK(back.values[static_cast<size_t>(i)][pdx] == ds.values[static_cast<size_t>(i)][pdx]);
      CHECK(back.masks[static_cast<size_t>(i)][pdx] == ds.masks[static_cast<size_t>(i)][pdx]);
      CHECK(back.truth[static_cast<size_t>(i)][pdx] == ds.truth[static_cast<size_t>(i)][pdx]);
    }
  // Byte-identical re-save.
  const std::string p2 = td.path("d2.ssd");
  dataset_save(p2, back, {{"origin", "unit-test"}});
  CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("dataset container: checkpoint magic is rejected") {
  TempDir td;
  const std::string p = td.path("ck.ssc");
  checkpoint_save(p, {}, {});
  CHECK_THROWS_AS(dataset_load(p), DataError);
}

TEST_CASE("fmt_g: shortest round-trip decimal strings") {
  CHECK(fmt_g(0.0) == "0");
  CHECK(fmt_g(1.0) == "1");
  CHECK(fmt_g(-2.5) == "-2.5");
  CHECK(fmt_g(0.1) == "0.1");
  // Round trip: parsing the string recovers the exact double.
  for (double v : {1.0 / 3.0, 2.3e-17, 123456.789, -9.999999e20}) {
    CHECK(std::stod(fmt_g(v)) == v);
  }
}

TEST_CASE("csv writer: header plus rows, fixed column count") {
  TempDir td;
  const std::string p = td.path("t.csv");
  {
    CsvWriter w(p, {"a", "b"});
    w.row({"1", "x"});
    w.row({fmt_g(2.5), "y"});
    CHECK_THROWS_AS(w.row({"only-one"}), DataError);
    w.flush();
  }
  std::ifstream f(p);
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(all == "a,b\n1,x\n2.5,y\n");
}

TEST_CASE("write_manifest emits sorted key=value lines") {
  TempDir td;
  const std::string p = td.path("m.txt");
  write_manifest(p, {{"b", "2"}, {"a", "1"}});
  std::ifstream f(p);
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(all == "a=1\nb=2\n");
}

TEST_CASE("write_pgm: header and clipped payload") {
  TempDir td;
  const std::string p = td.path("img.pgm");
  write_pgm(p, Tensor({2, 2}, {0.0f, 0.5f, 1.0f, 2.0f}));
  std::vector<unsigned char> bytes = slurp(p);
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
  CHECK(bytes[header.size() + 0] == 0);
  CHECK(bytes[header.size() + 1] == 128);  // round(0.5*255) = 128
  CHECK(bytes[header.size() + 2] == 255);
  CHECK(bytes[header.size() + 3] == 255);  // clipped
}

TEST_CASE("tile_grid: layout, padding and fill value") {
  std::vector<Tensor> imgs = {Tensor({2, 2}, {1, 1, 1, 1}), Tensor({2, 2}, {0, 0, 0, 0}),
                              Tensor({2, 2}, {1, 0, 0, 1})};
  Tensor grid = tile_grid(imgs, 2, 1, 0.25f);
  // Two columns, two rows of tiles; 2x2 tiles with 1-pixel padding between.
  CHECK(grid.shape() == Shape{5, 5});
  CHECK(grid.at(0, 0) == 1.0f);   // first tile
  CHECK(grid.at(0, 2) == 0.25f);  // padding column
  CHECK(grid.at(0, 3) == 0.0f);   // second tile
  CHECK(grid.at(2, 0) == 0.25f);  // padding row
  CHECK(grid.at(3, 0) == 1.0f);   // third tile
  CHECK(grid.at(3, 4) == 0.25f);  // empty cell stays at the pad value
  CHECK_THROWS_AS(tile_grid({}, 2), DataError);
}
