#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "ctxmeta/checkpoint.hpp"
#include "ctxmeta/error.hpp"
#include "ctxmeta/eval.hpp"
#include "helpers.hpp"

using namespace ctxmeta;
using namespace ctxmeta::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "ctxmeta_checkpoint_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Bitwise comparison of every parameter and the prototype bank.
void expect_identical(const ModelParams& a, const ModelParams& b) {
    const auto pa = a.named_parameters(), pb = b.named_parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].first, pb[i].first);
        ASSERT_EQ(pa[i].second.shape(), pb[i].second.shape());
        const auto da = pa[i].second.data(), db = pb[i].second.data();
        EXPECT_EQ(std::memcmp(da.data(), db.data(), da.size() * sizeof(double)), 0) << pa[i].first;
    }
    EXPECT_EQ(a.prototypes.sums, b.prototypes.sums);
    EXPECT_EQ(a.prototypes.weights, b.prototypes.weights);
    EXPECT_EQ(parameter_hash(a), parameter_hash(b));
}

ModelParams trained_mct_model() {
    ModelParams m(small_config(4, 2, 3), 21);
    Rng rng(4);
    auto ep = random_episode(3, 2, 2, 4, rng);
    ep.class_ids = {0, 1, 2};
    TrainConfig config;
    config.method = Method::mct;
    config.episodes = 3;
    meta_train(config, m, [&](std::size_t) { return ep; });
    return m;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto path = scratch("roundtrip.bin");
    const ModelParams fresh(small_config(4, 3, 3), 5);
    save_checkpoint(path.string(), fresh, "cafe");
    expect_identical(load_checkpoint(path.string()), fresh);
    EXPECT_EQ(checkpoint_config_hash(path.string()), "cafe");
    EXPECT_EQ(checkpoint_kind(path.string()), "concept-model");

    const auto trained = trained_mct_model();
    ASSERT_FALSE(trained.prototypes.empty());
    save_checkpoint(path.string(), trained);
    const auto back = load_checkpoint(path.string(), trained.config);
    expect_identical(back, trained);
    EXPECT_FALSE(fs::exists(path.string() + ".tmp"));

    ModelConfig reg;
    reg.regression = true;
    reg.num_concepts = 3;
    const ModelParams r(reg, 6);
    save_checkpoint(path.string(), r);
    expect_identical(load_checkpoint(path.string()), r);
}

TEST(Checkpoint, SavingTwiceGivesIdenticalFiles) {
    const ModelParams m(small_config(4, 2, 3), 7);
    save_checkpoint(scratch("a.bin").string(), m, "h");
    save_checkpoint(scratch("b.bin").string(), m, "h");
    EXPECT_EQ(read_bytes(scratch("a.bin")), read_bytes(scratch("b.bin")));
}

TEST(Checkpoint, FlatClassifierRoundTrip) {
    const FlatClassifier f(6, {5, 4}, 3, 7, 11);
    const auto path = scratch("flat.bin");
    save_checkpoint(path.string(), f);
    const auto g = load_flat_checkpoint(path.string());
    const auto a = f.parameters(), b = g.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(std::vector<double>(a[i].data().begin(), a[i].data().end()),
                  std::vector<double>(b[i].data().begin(), b[i].data().end()));
    }
    EXPECT_THROW(load_checkpoint(path.string()), FormatError);
}

TEST(Checkpoint, WrongMagicIsAFormatError) {
    const auto path = scratch("magic.bin");
    save_checkpoint(path.string(), ModelParams(small_config(4, 2, 3), 1));
    auto bytes = read_bytes(path);
    bytes[0] = 'X';
    write_bytes(path, bytes);
    EXPECT_THROW(load_checkpoint(path.string()), FormatError);
    write_bytes(path, {'n', 'o'});
    EXPECT_THROW(load_checkpoint(path.string()), FormatError);
}

TEST(Checkpoint, VersionMismatchIsAVersionError) {
    const auto path = scratch("version.bin");
    save_checkpoint(path.string(), ModelParams(small_config(4, 2, 3), 1));
    auto bytes = read_bytes(path);
    bytes[8] = static_cast<char>(kCheckpointVersion + 1);
    write_bytes(path, bytes);
    EXPECT_THROW(load_checkpoint(path.string()), VersionError);
}

TEST(Checkpoint, DamageIsACorruptionError) {
    const auto path = scratch("damage.bin");
    save_checkpoint(path.string(), ModelParams(small_config(4, 2, 3), 1));
    const auto good = read_bytes(path);

    auto flipped = good;
    flipped[good.size() / 2] ^= 0x10;
    write_bytes(path, flipped);
    EXPECT_THROW(load_checkpoint(path.string()), CorruptionError);

    for (std::size_t keep : {good.size() - 1, good.size() / 2, std::size_t{14}}) {
        write_bytes(path, std::vector<char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep)));
        EXPECT_THROW(load_checkpoint(path.string()), CorruptionError) << keep;
    }
}

TEST(Checkpoint, DimensionMismatchNamesTheField) {
    const auto path = scratch("dims.bin");
    save_checkpoint(path.string(), ModelParams(small_config(4, 3, 3), 1));
    try {
        load_checkpoint(path.string(), small_config(4, 2, 3));
        FAIL() << "expected a mismatch";
    } catch (const CheckpointMismatchError& e) {
        EXPECT_NE(std::string(e.what()).find("num_concepts"), std::string::npos);
    }
    EXPECT_THROW(load_checkpoint(path.string(), small_config(5, 3, 3)), CheckpointMismatchError);
    EXPECT_THROW(load_checkpoint(scratch("missing.bin").string()), IoError);
}

TEST(Checkpoint, UnwritablePathLeavesNothing) {
    EXPECT_THROW(save_checkpoint("/nonexistent-dir/model.bin", ModelParams(small_config(4, 2, 3), 1)), IoError);
}
