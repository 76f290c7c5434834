#include "wxr/tensor_archive.hpp"

#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace wxr;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "wxr_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("tensor_archive") {
  TEST_CASE("round trip keeps names, dtypes, shapes and values bitwise") {
    torch::manual_seed(3);
    TensorArchive ar;
    ar.put("a.f32", torch::randn({2, 3}));
    ar.put("b.f64", torch::randn({4}, torch::kFloat64));
    ar.put("c.i64", torch::tensor({1, -2, 3}, torch::kInt64));
    ar.put("d.u8", torch::tensor({0, 255}, torch::kUInt8));
    ar.put("e.scalar", torch::tensor(2.5));
    ar.put_text("meta", "{\"k\": 1}");
    const auto path = temp_path("roundtrip.ntar");
    ar.save(path);
    auto back = TensorArchive::load(path);
    CHECK(back.names() == ar.names());
    for (const auto& name : ar.names()) {
      CHECK(back.get(name).dtype() == ar.get(name).dtype());
      CHECK(back.get(name).sizes() == ar.get(name).sizes());
      CHECK(torch::equal(back.get(name), ar.get(name)));
    }
    CHECK(back.get_text("meta") == "{\"k\": 1}");
  }

  TEST_CASE("save leaves no temp file behind and overwrites atomically") {
    const auto path = temp_path("atomic.ntar");
    TensorArchive a;
    a.put("x", torch::ones({2}));
    a.save(path);
    TensorArchive b;
    b.put("y", torch::zeros({3}));
    b.save(path);
    auto back = TensorArchive::load(path);
    CHECK(back.names() == std::vector<std::string>{"y"});
    for (const auto& e : fs::directory_iterator(path.parent_path())) {
      CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
    }
  }

  TEST_CASE("bad magic, truncation and missing names are reported") {
    const auto path = temp_path("garbage.ntar");
    std::ofstream(path) << "not an archive";
    CHECK_THROWS_AS(TensorArchive::load(path), ArchiveError);
    CHECK_THROWS_AS(TensorArchive::load(temp_path("does_not_exist.ntar")), ArchiveError);

    TensorArchive ar;
    ar.put("x", torch::ones({64}));
    const auto full = temp_path("trunc.ntar");
    ar.save(full);
    fs::resize_file(full, fs::file_size(full) - 16);
    CHECK_THROWS_AS(TensorArchive::load(full), ArchiveError);
    CHECK_THROWS_AS(ar.get("missing"), ArchiveError);
  }

  TEST_CASE("parameter names map weight/bias to w/b") {
    CHECK(archive_param_name("gA.enc.0.weight") == "gA.enc.0.w");
    CHECK(archive_param_name("gA.fa.3.ca.conv1.bias") == "gA.fa.3.ca.conv1.b");
    CHECK(archive_param_name("proj.t2.mlp1.weight") == "proj.t2.mlp1.w");
  }

  TEST_CASE("import validates the name set and shapes and names the offender") {
    torch::nn::Linear src(3, 2), dst(3, 2), wrong(4, 2);
    TensorArchive ar;
    export_parameters(*src, "m.", ar);
    import_parameters(*dst, "m.", ar);
    CHECK(torch::equal(dst->weight, src->weight));
    try {
      import_parameters(*wrong, "m.", ar);
      FAIL("shape mismatch not detected");
    } catch (const ArchiveError& ex) {
      CHECK(std::string(ex.what()).find("m.w") != std::string::npos);
    }
    TensorArchive partial;
    partial.put("m.w", src->weight.detach());
    try {
      import_parameters(*dst, "m.", partial);
      FAIL("missing tensor not detected");
    } catch (const ArchiveError& ex) {
      CHECK(std::string(ex.what()).find("m.b") != std::string::npos);
    }
    ar.put("m.extra", torch::ones({1}));
    try {
      import_parameters(*dst, "m.", ar);
      FAIL("unexpected tensor not detected");
    } catch (const ArchiveError& ex) {
      CHECK(std::string(ex.what()).find("m.extra") != std::string::npos);
    }
  }
}
