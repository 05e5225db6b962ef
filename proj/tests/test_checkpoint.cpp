#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "vlgor/checkpoint.hpp"
#include "vlgor/rng.hpp"
#include "vlgor/worldmodel.hpp"

using namespace vlgor;

namespace {

// Two hand-rolled parameter blocks backed by vectors the test owns.
struct FakeNet {
    std::vector<float> w = std::vector<float>(12);
    std::vector<float> gw = std::vector<float>(12);
    std::vector<float> b = std::vector<float>(4);
    std::vector<float> gb = std::vector<float>(4);

    std::vector<nn::ParamView<float>> params() {
        return {
            {"fc.weight", w.data(), gw.data(), {3, 4}, w.size()},
            {"fc.bias", b.data(), gb.data(), {4}, b.size()},
        };
    }
};

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("checkpoints round trip parameters bit-exactly") {
    FakeNet src;
    Rng rng(31);
    for (auto& v : src.w) v = static_cast<float>(rng.normal());
    for (auto& v : src.b) v = static_cast<float>(rng.normal());
    src.b[0] = 0.1f;  // a value that is not exactly representable
    const auto path = temp_path("vlgor_ckpt_roundtrip.ckpt");

    const std::map<std::string, std::string> meta = {{"epochs", "10"}, {"seed", "31"}};
    ckpt::save_checkpoint(path.string(), "fake-v1", src.params(), meta);

    FakeNet dst;
    auto views = dst.params();
    const auto loaded_meta = ckpt::load_checkpoint(path.string(), "fake-v1", views);
    CHECK(dst.w == src.w);
    CHECK(dst.b == src.b);
    CHECK(loaded_meta == meta);

    std::string arch;
    CHECK(ckpt::read_checkpoint_meta(path.string(), &arch) == meta);
    CHECK(arch == "fake-v1");
    std::filesystem::remove(path);
}

TEST_CASE("checkpoints round trip a real network unchanged") {
    wm::WorldModelNet a(16, 5);
    const auto path = temp_path("vlgor_ckpt_wm.ckpt");
    ckpt::save_checkpoint(path.string(), "wm-16", a.params(), {{"resolution", "16"}});

    wm::WorldModelNet b(16, 99);  // different init, same architecture
    auto views = b.params();
    ckpt::load_checkpoint(path.string(), "wm-16", views);

    const auto pa = a.params();
    const auto pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        REQUIRE(pa[i].size == pb[i].size);
        bool equal = true;
        for (std::size_t j = 0; j < pa[i].size; ++j) equal &= pa[i].value[j] == pb[i].value[j];
        CHECK(equal);
    }

    // Same image through both nets produces identical outputs.
    const env::BallState s = env::reset(2);
    const std::vector<int> tokens(lang::kTokenLength, 0);
    const auto outa = a.predict(s.flat(), tokens, wm::kNullAction);
    const auto outb = b.predict(s.flat(), tokens, wm::kNullAction);
    CHECK(outa.positions == outb.positions);
    CHECK(outa.action == outb.action);
    std::filesystem::remove(path);
}

TEST_CASE("loading rejects mismatched architecture, names, and shapes") {
    FakeNet src;
    const auto path = temp_path("vlgor_ckpt_mismatch.ckpt");
    ckpt::save_checkpoint(path.string(), "fake-v1", src.params());

    FakeNet dst;
    auto views = dst.params();
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v2", views),
                         doctest::Contains("architecture mismatch"), std::runtime_error);

    auto renamed = dst.params();
    renamed[1].name = "fc.scale";
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v1", renamed),
                         doctest::Contains("parameter mismatch"), std::runtime_error);

    auto reshaped = dst.params();
    reshaped[0].shape = {4, 3};
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v1", reshaped),
                         doctest::Contains("parameter mismatch"), std::runtime_error);

    std::vector<nn::ParamView<float>> fewer = {dst.params()[0]};
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v1", fewer),
                         doctest::Contains("parameter count mismatch"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("loading rejects corrupted files") {
    FakeNet src;
    const auto path = temp_path("vlgor_ckpt_corrupt.ckpt");
    ckpt::save_checkpoint(path.string(), "fake-v1", src.params());

    // Truncate inside the binary payload of the second parameter.
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 8);
    FakeNet dst;
    auto views = dst.params();
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v1", views),
                         doctest::Contains("truncated data for 'fc.bias'"), std::runtime_error);

    {
        std::ofstream out(path, std::ios::trunc);
        out << "{not json\n";
    }
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v1", views),
                         doctest::Contains("bad checkpoint header"), std::runtime_error);

    {
        std::ofstream out(path, std::ios::trunc);
        out << "{\"format\":\"vlgor-ckpt-0\",\"arch\":\"fake-v1\",\"params\":[]}\n";
    }
    CHECK_THROWS_WITH_AS(ckpt::load_checkpoint(path.string(), "fake-v1", views),
                         doctest::Contains("unsupported checkpoint format"), std::runtime_error);

    CHECK_THROWS(ckpt::load_checkpoint(temp_path("vlgor_absent.ckpt").string(), "fake-v1", views));
    std::filesystem::remove(path);
}
