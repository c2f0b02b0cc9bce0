#include <cstdio>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "bft/net.hpp"
#include "bft/rng.hpp"
#include "bft/serial.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

#include <nlohmann/json.hpp>

using bft::IoCode;
using bft::NetParams;
using bft::NetSpec;
using bft::Tensor;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("bft-serial-" + std::to_string(::getpid()) + "-" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

bool params_equal(const NetParams& a, const NetParams& b) {
    if (a.conv.size() != b.conv.size() || a.dense.size() != b.dense.size()) return false;
    for (size_t i = 0; i < a.conv.size(); ++i)
        if (!(a.conv[i].weights == b.conv[i].weights && a.conv[i].bias == b.conv[i].bias))
            return false;
    for (size_t i = 0; i < a.dense.size(); ++i)
        if (!(a.dense[i].weights == b.dense[i].weights && a.dense[i].bias == b.dense[i].bias))
            return false;
    return true;
}

void corrupt_bytes(const std::string& path, std::streamoff offset, const char* bytes, size_t n) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    REQUIRE(f.good());
    f.seekp(offset);
    f.write(bytes, static_cast<std::streamsize>(n));
}

void truncate_file(const std::string& path, uintmax_t keep) {
    std::filesystem::resize_file(path, keep);
}

}  // namespace

TEST_CASE("fnv1a64 matches its published reference values") {
    using bft::wire::fnv1a64;
    CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ull);
    const unsigned char a[] = {'a'};
    CHECK(fnv1a64(a, 1) == 0xaf63dc4c8601ec8cull);
    const unsigned char foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
    CHECK(fnv1a64(foobar, 6) == 0x85944171f73967e8ull);
}

TEST_CASE("spec json round trip is the identity") {
    NetSpec s = bft::snet_spec(7);
    NetSpec back = bft::spec_from_json(bft::spec_to_json(s));
    CHECK(back == s);

    bft::Rng rng(31);
    for (int i = 0; i < 5; ++i) {
        NetSpec r = oracle::random_spec(rng);
        CHECK(bft::spec_from_json(bft::spec_to_json(r)) == r);
    }
}

TEST_CASE("spec_digest separates architectures and ignores nothing") {
    NetSpec a = bft::snet_spec(2);
    NetSpec b = bft::snet_spec(3);
    CHECK(bft::spec_digest(a) == bft::spec_digest(a));
    CHECK(bft::spec_digest(a) != bft::spec_digest(b));
}

TEST_CASE("net save/load round trip is bit exact") {
    TempDir tmp;
    NetSpec s = bft::snet_spec(3);
    NetParams p = bft::init_net(s, 4242);
    bft::save_net(s, p, tmp.file("net.cnn"));

    auto [s2, p2] = bft::load_net(tmp.file("net.cnn"));
    CHECK(s2 == s);
    CHECK(p2.rng_seed == p.rng_seed);
    CHECK(params_equal(p, p2));
    CHECK(bft::peek_net_kind(tmp.file("net.cnn")) == "plain");

    SUBCASE("round trip preserves logits to the bit") {
        bft::Rng rng(8);
        Tensor in = oracle::random_input(s.input_shape, rng);
        CHECK(bft::forward(s, p, in).logits == bft::forward(s2, p2, in).logits);
    }
}

TEST_CASE("corrupted net files raise distinct error codes") {
    TempDir tmp;
    NetSpec s = bft::snet_spec(2);
    NetParams p = bft::init_net(s, 1);
    const std::string path = tmp.file("net.cnn");
    bft::save_net(s, p, path);
    const uintmax_t full = std::filesystem::file_size(path);

    SUBCASE("bad magic") {
        corrupt_bytes(path, 0, "XXXX", 4);
        try {
            bft::load_net(path);
            FAIL("expected io_error");
        } catch (const bft::io_error& e) {
            CHECK(e.code == IoCode::BadMagic);
        }
    }

    SUBCASE("truncated payload") {
        truncate_file(path, full - 7);
        try {
            bft::load_net(path);
            FAIL("expected io_error");
        } catch (const bft::io_error& e) {
            CHECK(e.code == IoCode::Truncated);
        }
    }

    SUBCASE("truncated header") {
        truncate_file(path, 6);
        try {
            bft::load_net(path);
            FAIL("expected io_error");
        } catch (const bft::io_error& e) {
            CHECK(e.code == IoCode::Truncated);
        }
    }

    SUBCASE("missing file") {
        CHECK_THROWS(bft::load_net(tmp.file("absent.cnn")));
    }
}

TEST_CASE("io codes carry distinct names") {
    std::set<std::string> names;
    for (IoCode c : {IoCode::BadMagic, IoCode::Truncated, IoCode::VersionMismatch,
                     IoCode::DigestMismatch, IoCode::ShapeMismatch, IoCode::WrongKind})
        names.insert(bft::io_code_name(c));
    CHECK(names.size() == 6);
}

TEST_CASE("layer json rejects unknown types") {
    nlohmann::json j;
    j["type"] = "batchnorm";
    CHECK_THROWS(bft::layer_from_json(j));
}
