#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>

#include "bft/filtertree.hpp"
#include "bft/net.hpp"

#include <nlohmann/json_fwd.hpp>

namespace bft {

enum class IoCode {
    BadMagic,
    Truncated,
    VersionMismatch,
    DigestMismatch,
    ShapeMismatch,
    WrongKind,
};

const char* io_code_name(IoCode c);

struct io_error : std::runtime_error {
    IoCode code;
    io_error(IoCode c, const std::string& msg)
        : std::runtime_error(std::string(io_code_name(c)) + ": " + msg), code(c) {}
};

// Low-level little-endian wire helpers shared by the .cnn and .bft formats.
namespace wire {

void write_u32(std::ostream& out, uint32_t v);
uint32_t read_u32(std::istream& in, const char* what);

// magic (4 bytes) + u32 length-prefixed UTF-8 JSON header
void write_header(std::ostream& out, const char magic[4], const std::string& json_text);
std::string read_header(std::istream& in, const char magic[4]);

void write_floats(std::ostream& out, const Tensor& t);
void read_floats(std::istream& in, Tensor& t);

uint64_t fnv1a64(const unsigned char* data, size_t n);
// digest over a tensor's little-endian payload bytes, chained
void digest_floats(uint64_t& h, const Tensor& t);
std::string digest_hex(uint64_t h);

}  // namespace wire

nlohmann::json layer_to_json(const LayerSpec& l);
LayerSpec layer_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const NetSpec& spec);
NetSpec spec_from_json(const nlohmann::json& j);

// Pruned-stage structure (geometry, trailing layers, per-filter channel
// lists); weights and biases travel in the payload section, not the JSON.
nlohmann::json stage_to_json(const PrunedStage& stage);
PrunedStage stage_from_json(const nlohmann::json& j);

// FNV-1a of the canonical spec JSON; identifies a source architecture.
std::string spec_digest(const NetSpec& spec);

// network parameter tensors in on-disk payload order (per conv layer: weights,
// bias; then per dense layer: weights, bias)
std::vector<const Tensor*> net_param_payload(const NetParams& params);
std::vector<Tensor*> net_param_payload(NetParams& params);

// 4-byte magic shared by every ".cnn" flavor
const char* net_magic();

// ".cnn" container, plain network flavor: magic "CNN1", length-prefixed JSON
// header (spec + shape table + seed), then raw float32 payloads in layer order.
void save_net(const NetSpec& spec, const NetParams& params, const std::string& path);
std::pair<NetSpec, NetParams> load_net(const std::string& path);

// "plain" or "target", read from the header without loading the payload
std::string peek_net_kind(const std::string& path);

}  // namespace bft
