#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "pseudoseg/volume.hpp"

namespace pseudoseg {

// VOLG container:
//   "VOLG0001" | u32 LE header length | UTF-8 JSON header | raw LE payload
// Header keys: shape [z,y,x], voxel_size [dz,dy,dx], dtype, kind, and an
// optional "provenance" object. Payload is C row-major in (Z, Y, X) order.

enum class VolgKind { intensity, labels, probs };

std::string to_string(VolgKind k);
VolgKind kind_from_string(const std::string& s);

struct VolgHeader {
    Shape3 shape;
    VoxelSize voxel_size;
    DType dtype = DType::f32;
    VolgKind kind = VolgKind::intensity;
    Provenance provenance;
};

/// Decoded file: header plus payload widened to float (f32 files) or kept
/// as raw integers (u8/u16 files).
struct VolgFile {
    VolgHeader header;
    std::variant<std::vector<float>, std::vector<std::uint8_t>, std::vector<std::uint16_t>> payload;
};

VolgFile read_volg(const std::filesystem::path& path);
VolgHeader read_volg_header(const std::filesystem::path& path);

Volume3D load_volume(const std::filesystem::path& path, Provenance* provenance = nullptr);
LabelVolume load_labels(const std::filesystem::path& path, Provenance* provenance = nullptr);
ProbVolume load_probs(const std::filesystem::path& path, Provenance* provenance = nullptr);

void save_volume(const Volume3D& v, const std::filesystem::path& path, const Provenance& provenance = {});
void save_labels(const LabelVolume& v, const std::filesystem::path& path, const Provenance& provenance = {});
void save_probs(const ProbVolume& v, const std::filesystem::path& path, const Provenance& provenance = {});

/// Serialized bytes of a file as save_volume would write them.
std::vector<char> encode_volume(const Volume3D& v, const Provenance& provenance = {});

// Shared framing for checkpoint-style containers: magic, JSON header, payload.
void write_framed(const std::filesystem::path& path, const char (&magic)[9], const nlohmann::json& header,
                  const std::vector<char>& payload);
std::pair<nlohmann::json, std::vector<char>> read_framed(const std::filesystem::path& path, const char (&magic)[9]);

} // namespace pseudoseg
