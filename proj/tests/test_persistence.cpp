#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "detcal/persistence.hpp"

using namespace detcal;

namespace {

Architecture small_arch() {
  Architecture arch;
  arch.input_features = 6;
  arch.max_rows = 5;
  arch.num_classes = 4;
  arch.feature_widths = {8, 8};
  arch.classifier_hidden = {8};
  return arch;
}

void check_equal(const ModelParameters& a, const ModelParameters& b) {
  REQUIRE(a.arch == b.arch);
  REQUIRE(a.feature_layers.size() == b.feature_layers.size());
  REQUIRE(a.classifier.size() == b.classifier.size());
  for (std::size_t l = 0; l < a.feature_layers.size(); ++l) {
    CHECK((a.feature_layers[l].weights - b.feature_layers[l].weights).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((a.feature_layers[l].bias - b.feature_layers[l].bias).cwiseAbs().maxCoeff() == 0.0);
  }
  for (std::size_t l = 0; l < a.classifier.size(); ++l) {
    CHECK((a.classifier[l].weights - b.classifier[l].weights).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.classifier[l].bias - b.classifier[l].bias).cwiseAbs().maxCoeff() == 0.0);
  }
}

}  // namespace

TEST_CASE("serialize round trip") {
  const auto p = init_parameters(small_arch(), 7);
  const auto bytes = serialize_checkpoint(p);
  check_equal(deserialize_checkpoint(bytes), p);

  SUBCASE("header is a single json line") {
    const auto nl = bytes.find('\n');
    REQUIRE(nl != std::string::npos);
    const auto header = bytes.substr(0, nl);
    CHECK(header.find("detcal-checkpoint") != std::string::npos);
    CHECK(header.find("\"version\":1") != std::string::npos);
  }

  SUBCASE("variants and embeddings survive") {
    auto arch = small_arch();
    arch.embedding_dim = 3;
    arch.pool = PoolMode::kLiteral;
    check_equal(deserialize_checkpoint(serialize_checkpoint(init_parameters(arch, 1))),
                init_parameters(arch, 1));

    const auto mlp = init_parameters(Architecture::mlp(6, 5, 4), 2);
    check_equal(deserialize_checkpoint(serialize_checkpoint(mlp)), mlp);
  }

  SUBCASE("special values survive exactly") {
    auto q = p;
    q.feature_layers[0].weights(0, 0) = 0.1 + 0.2;  // not representable
    q.feature_layers[0].weights(1, 0) = -0.0;
    q.classifier[0].bias(2) = 1e-308;
    const auto back = deserialize_checkpoint(serialize_checkpoint(q));
    CHECK(back.feature_layers[0].weights(0, 0) == q.feature_layers[0].weights(0, 0));
    CHECK(std::signbit(back.feature_layers[0].weights(1, 0)));
    CHECK(back.classifier[0].bias(2) == 1e-308);
  }
}

TEST_CASE("typed corruption errors") {
  const auto p = init_parameters(small_arch(), 7);
  const auto bytes = serialize_checkpoint(p);

  SUBCASE("wrong format tag") {
    auto bad = bytes;
    const auto pos = bad.find("detcal-checkpoint");
    bad.replace(pos, 6, "datcel");
    CHECK_THROWS_AS((void)deserialize_checkpoint(bad), FormatError);
  }

  SUBCASE("not a checkpoint at all") {
    CHECK_THROWS_AS((void)deserialize_checkpoint("hello world"), FormatError);
    CHECK_THROWS_AS((void)deserialize_checkpoint(""), FormatError);
  }

  SUBCASE("future version") {
    auto bad = bytes;
    const auto pos = bad.find("\"version\":1");
    bad.replace(pos, 11, "\"version\":9");
    CHECK_THROWS_AS((void)deserialize_checkpoint(bad), VersionError);
  }

  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() - 3] ^= 0x40;
    CHECK_THROWS_AS((void)deserialize_checkpoint(bad), ChecksumError);
  }

  SUBCASE("truncated payload") {
    CHECK_THROWS_AS((void)deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)),
                    TruncatedError);
    CHECK_THROWS_AS((void)deserialize_checkpoint(bytes.substr(0, bytes.find('\n') + 1)),
                    TruncatedError);
  }

  SUBCASE("trailing garbage") {
    CHECK_THROWS_AS((void)deserialize_checkpoint(bytes + "tail"), FormatError);
  }
}

TEST_CASE("file save and load") {
  const auto path = (std::filesystem::temp_directory_path() / "detcal_ckpt.bin").string();
  const auto p = init_parameters(small_arch(), 9);
  save_checkpoint(p, path);
  check_equal(load_checkpoint(path), p);

  SUBCASE("atomic overwrite") {
    const auto q = init_parameters(small_arch(), 10);
    save_checkpoint(q, path);
    check_equal(load_checkpoint(path), q);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/ckpt.bin"), PersistError);
  }
  std::remove(path.c_str());
}

TEST_CASE("many round trips across seeds") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    auto arch = small_arch();
    arch.feature_widths = {4 + static_cast<int>(seed % 3) * 4, 8};
    const auto p = init_parameters(arch, seed);
    check_equal(deserialize_checkpoint(serialize_checkpoint(p)), p);
  }
}
