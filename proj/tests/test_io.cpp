#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "oracles.hpp"
#include "xinc/io.hpp"

using namespace xinc;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor quantized_frame(std::size_t h, std::size_t w, std::uint64_t seed) {
  auto f = oracle::random_tensor<float>({3, h, w}, seed, 0.0, 1.0);
  for (auto& v : f.values()) v = static_cast<float>(quantize8(v)) / 255.0f;
  return f;
}

NeuralCanvas sample_canvas() {
  NeuralCanvas c;
  c.kind = "nerv";
  c.model_hash = "abc";
  c.frame_index = 3;
  CanvasLayer a;
  a.id = "block1";
  a.in_channels = 2;
  a.maps = oracle::random_tensor<float>({4, 3, 5}, 1);
  CanvasLayer b;
  b.id = "head";
  b.in_channels = 1;
  b.maps = oracle::random_tensor<float>({3, 3, 5}, 2);
  c.layers = {a, b};
  return c;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("png rgb round-trip with text chunks") {
    const auto dir = oracle::scratch_dir("png");
    const auto f = quantized_frame(5, 7, 3);
    write_png_rgb(dir / "a.png", f, {{"xinc:config_hash", "deadbeef"}});
    const auto g = read_png_rgb(dir / "a.png");
    CHECK(g == f);
    CHECK(read_png_text(dir / "a.png").at("xinc:config_hash") == "deadbeef");
    CHECK(quantize8(-1.0f) == 0);
    CHECK(quantize8(2.0f) == 255);
    CHECK(quantize8(0.5f) == 128);
    CHECK_THROWS_AS(read_png_rgb(dir / "missing.png"), IoError);
    spit(dir / "junk.png", {'n', 'o', 'p', 'e'});
    CHECK_THROWS_AS(read_png_rgb(dir / "junk.png"), IoError);
  }

  TEST_CASE("mask round-trip keeps 16-bit ids") {
    const auto dir = oracle::scratch_dir("mask");
    MaskFrame m{2, 3, {0, 1, 300, 65535, 7, 7}};
    write_png_mask(dir / "m.png", m);
    const auto r = read_png_mask(dir / "m.png");
    CHECK(r.height == 2);
    CHECK(r.width == 3);
    CHECK(r.ids == m.ids);
    CHECK_THROWS_AS(read_png_mask(oracle::data_dir() / "cat" / "frame_0000.png"), IoError);
    const auto fixture = read_png_mask(oracle::data_dir() / "cat_masks" / "frame_0000.png");
    CHECK(fixture.height == 128);
    CHECK(fixture.width == 256);
  }

  TEST_CASE("frame sets load in lexicographic order with masks aligned by name") {
    const auto dir = oracle::scratch_dir("frames");
    fs::create_directories(dir / "f");
    fs::create_directories(dir / "m");
    for (const char* name : {"b.png", "a.png", "c.png"}) write_png_rgb(dir / "f" / name, quantized_frame(4, 6, name[0]));
    write_png_mask(dir / "m" / "b.png", MaskFrame{4, 6, std::vector<std::uint32_t>(24, 2)});
    auto set = load_frames(dir / "f");
    REQUIRE(set.frames.size() == 3);
    CHECK(set.paths[0].filename() == "a.png");
    CHECK(set.paths[2].filename() == "c.png");
    CHECK(set.height() == 4);
    load_masks(set, dir / "m");
    CHECK(set.labeled() == 1);
    CHECK_FALSE(set.masks[0].has_value());
    CHECK(set.masks[1]->ids[0] == 2);
    CHECK(list_files(dir / "f", "[ab].png").size() == 2);

    fs::create_directories(dir / "empty");
    CHECK_THROWS_AS(load_frames(dir / "empty"), IoError);
    CHECK_THROWS_AS(load_frames(dir / "nowhere"), IoError);
    write_png_rgb(dir / "f" / "d.png", quantized_frame(5, 6, 9));
    CHECK_THROWS_AS(load_frames(dir / "f"), DimensionError);
  }

  TEST_CASE("geometry: 720x1280 to 144x256 samples the 5x5 cell centres") {
    const auto src = oracle::random_tensor<float>({3, 720, 1280}, 4, 0.0, 1.0);
    const auto out = normalize_geometry(src, 144, 256);
    REQUIRE(out.shape() == Shape{3, 144, 256});
    double worst = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 144; ++y)
        for (std::size_t x = 0; x < 256; ++x)
          worst = std::max(worst, static_cast<double>(std::abs(out.at(c, y, x) - src.at(c, 5 * y + 2, 5 * x + 2))));
    CHECK(worst < 1e-6);
  }

  TEST_CASE("geometry: cover scale crops the centre and keeps ramps linear") {
    // 100 x 400 -> 128 x 256 is not allowed (source smaller); 200 x 300 -> 128 x 256 scales by 0.8533.
    Tensor ramp({1, 200, 300});
    for (std::size_t y = 0; y < 200; ++y)
      for (std::size_t x = 0; x < 300; ++x) ramp.at(0, y, x) = static_cast<float>(x);
    const auto out = normalize_geometry(ramp, 128, 256);
    REQUIRE(out.shape() == Shape{1, 128, 256});
    const double step = out.at(0, 10, 101) - out.at(0, 10, 100);
    CHECK(step == doctest::Approx(300.0 / 256.0).epsilon(1e-4));
    for (std::size_t x = 1; x < 256; ++x) CHECK(out.at(0, 50, x) - out.at(0, 50, x - 1) == doctest::Approx(step).epsilon(1e-3));
    CHECK(out.at(0, 0, 0) == out.at(0, 127, 0));
    CHECK(normalize_geometry(ramp, 200, 300) == ramp);
    CHECK_THROWS_AS(normalize_geometry(ramp, 256, 256), ArgumentError);

    MaskFrame m{4, 4, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}};
    const auto mm = normalize_geometry(m, 2, 2);
    CHECK(mm.ids == std::vector<std::uint32_t>{1, 2, 3, 4});
  }

  TEST_CASE("canvas container round-trip and integrity checks") {
    const auto dir = oracle::scratch_dir("canvas");
    const auto c = sample_canvas();
    save_canvas(dir / "c.xcv", c, {{"config_hash", "h1"}});
    const auto r = load_canvas(dir / "c.xcv");
    CHECK(r.kind == "nerv");
    CHECK(r.model_hash == "abc");
    CHECK(r.frame_index == 3);
    REQUIRE(r.layers.size() == 2);
    CHECK(r.layers[0].id == "block1");
    CHECK(r.layers[0].in_channels == 2);
    CHECK(r.layers[0].maps == c.layers[0].maps);
    CHECK(r.content_hash() == c.content_hash());
    const auto index = read_canvas_index(dir / "c.xcv");
    CHECK(index["version"] == kCanvasVersion);
    CHECK(index["meta"]["config_hash"] == "h1");
    CHECK(index["layers"][1]["neuron_count"] == 3);

    const auto bytes = slurp(dir / "c.xcv");
    CHECK(std::memcmp(bytes.data(), "XINCCNVS", 8) == 0);
    spit(dir / "trunc.xcv", std::vector<char>(bytes.begin(), bytes.end() - 10));
    CHECK_THROWS_AS(load_canvas(dir / "trunc.xcv"), IntegrityError);
    auto flipped = bytes;
    flipped[flipped.size() - 3] ^= 0x40;
    spit(dir / "flip.xcv", flipped);
    CHECK_THROWS_AS(load_canvas(dir / "flip.xcv"), IntegrityError);

    // Rewrite the index with a future version.
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    auto j = nlohmann::json::parse(std::string(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len)));
    j["version"] = kCanvasVersion + 1;
    const std::string text = j.dump();
    const std::uint64_t nlen = text.size();
    std::string head = "XINCCNVS";
    head.append(reinterpret_cast<const char*>(&nlen), 8);
    head += text;
    head.append(bytes.begin() + 16 + static_cast<long>(len), bytes.end());
    const std::vector<char> v(head.begin(), head.end());
    spit(dir / "future.xcv", v);
    CHECK_THROWS_AS(load_canvas(dir / "future.xcv"), IntegrityError);
    spit(dir / "bad.xcv", {'X', 'Y'});
    CHECK_THROWS_AS(load_canvas(dir / "bad.xcv"), IntegrityError);

    save_canvas(dir / "c2.xcv", c, {{"config_hash", "h1"}});
    CHECK(slurp(dir / "c2.xcv") == bytes);
  }

  TEST_CASE("rasters and flow files round-trip") {
    const auto dir = oracle::scratch_dir("raster");
    const auto r = oracle::random_tensor<float>({6, 9}, 5);
    write_raster(dir / "r.f32", r, {{"config_hash", "x"}});
    CHECK(read_raster(dir / "r.f32") == r);
    CHECK(read_json(dir / "r.f32.json")["config_hash"] == "x");
    const auto flow = oracle::random_tensor<float>({2, 4, 5}, 6);
    write_flo(dir / "f.flo", flow);
    CHECK(read_flo(dir / "f.flo") == flow);
    const auto bytes = slurp(dir / "f.flo");
    CHECK(std::memcmp(bytes.data(), "PIEH", 4) == 0);
    spit(dir / "short.flo", std::vector<char>(bytes.begin(), bytes.end() - 4));
    CHECK_THROWS_AS(read_flo(dir / "short.flo"), IntegrityError);
  }

  TEST_CASE("csv and json output") {
    CsvWriter csv({"a", "b"}, "cafe");
    csv.row({"1", format_number(0.1)});
    CHECK(csv.str() == "# config_hash=cafe\na,b\n1,0.1\n");
    CHECK_THROWS_AS(csv.row({"1"}), ArgumentError);
    CHECK(CsvWriter({"x"}).str() == "x\n");
    CHECK(format_number(std::nan("")) == "nan");
    CHECK(format_number(-INFINITY) == "-inf");
    CHECK(format_number(1e-20) == "1e-20");
    CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);

    const auto dir = oracle::scratch_dir("json");
    write_json(dir / "a.json", {{"k", 1}});
    CHECK(read_json(dir / "a.json")["k"] == 1);
    spit(dir / "b.json", {'{', 'x'});
    CHECK_THROWS_AS(read_json(dir / "b.json"), ConfigError);
  }
}
