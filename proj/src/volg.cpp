#include "pseudoseg/volg.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pseudoseg/error.hpp"

namespace pseudoseg {

static_assert(std::endian::native == std::endian::little, "VOLG payloads are written with native little-endian layout");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kVolgMagic[9] = "VOLG0001";

std::size_t dtype_bytes(DType t)
{
    switch (t) {
    case DType::f32: return 4;
    case DType::u8: return 1;
    case DType::u16: return 2;
    }
    return 0;
}

json header_json(const VolgHeader& h)
{
    json j{
        {"shape", {h.shape.z, h.shape.y, h.shape.x}},
        {"voxel_size", {h.voxel_size.z, h.voxel_size.y, h.voxel_size.x}},
        {"dtype", to_string(h.dtype)},
        {"kind", to_string(h.kind)},
    };
    if (!h.provenance.empty()) j["provenance"] = h.provenance;
    return j;
}

VolgHeader parse_header(const json& j)
{
    VolgHeader h;
    try {
        const auto& s = j.at("shape");
        const auto& v = j.at("voxel_size");
        if (s.size() != 3 || v.size() != 3) throw InvalidArgument("shape and voxel_size must have 3 entries");
        h.shape = {s[0].get<std::int64_t>(), s[1].get<std::int64_t>(), s[2].get<std::int64_t>()};
        h.voxel_size = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
        h.dtype = dtype_from_string(j.at("dtype").get<std::string>());
        h.kind = kind_from_string(j.at("kind").get<std::string>());
        if (j.contains("provenance")) h.provenance = j.at("provenance").get<Provenance>();
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed VOLG header: ") + e.what());
    }
    require(h.shape.positive(), "VOLG header shape must be positive");
    require(h.voxel_size.positive(), "VOLG header voxel size must be positive");
    return h;
}

template <typename T>
void append_raw(std::vector<char>& out, std::span<const T> values)
{
    const auto* p = reinterpret_cast<const char*>(values.data());
    out.insert(out.end(), p, p + values.size_bytes());
}

std::vector<char> encode(const VolgHeader& h, const std::vector<char>& payload)
{
    const std::string text = header_json(h).dump();
    std::vector<char> out(kVolgMagic, kVolgMagic + 8);
    const auto len = static_cast<std::uint32_t>(text.size());
    char len_bytes[4];
    std::memcpy(len_bytes, &len, 4);
    out.insert(out.end(), len_bytes, len_bytes + 4);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<char> read_bytes(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

/// Splits magic | length | JSON | payload; returns the JSON and the payload offset.
std::pair<json, std::size_t> split_frame(const std::vector<char>& bytes, const char (&magic)[9], const fs::path& path)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), magic, 8) != 0)
        throw InvalidArgument("'" + path.string() + "' is not a " + std::string(magic, 4) + " file");
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 4);
    if (bytes.size() < 12 + static_cast<std::size_t>(len))
        throw InvalidArgument("'" + path.string() + "': truncated header");
    json j;
    try {
        j = json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
    } catch (const json::exception& e) {
        throw InvalidArgument("'" + path.string() + "': header is not valid JSON: " + e.what());
    }
    return {std::move(j), 12 + static_cast<std::size_t>(len)};
}

} // namespace

std::string to_string(VolgKind k)
{
    switch (k) {
    case VolgKind::intensity: return "intensity";
    case VolgKind::labels: return "labels";
    case VolgKind::probs: return "probs";
    }
    return "?";
}

VolgKind kind_from_string(const std::string& s)
{
    if (s == "intensity") return VolgKind::intensity;
    if (s == "labels") return VolgKind::labels;
    if (s == "probs") return VolgKind::probs;
    throw InvalidArgument("unknown VOLG kind '" + s + "'");
}

void write_framed(const fs::path& path, const char (&magic)[9], const json& header, const std::vector<char>& payload)
{
    const std::string text = header.dump();
    std::vector<char> out(magic, magic + 8);
    const auto len = static_cast<std::uint32_t>(text.size());
    char len_bytes[4];
    std::memcpy(len_bytes, &len, 4);
    out.insert(out.end(), len_bytes, len_bytes + 4);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    write_bytes(path, out);
}

std::pair<json, std::vector<char>> read_framed(const fs::path& path, const char (&magic)[9])
{
    const auto bytes = read_bytes(path);
    auto [j, offset] = split_frame(bytes, magic, path);
    return {std::move(j), std::vector<char>(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end())};
}

VolgHeader read_volg_header(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::vector<char> head(12);
    is.read(head.data(), 12);
    if (is.gcount() != 12 || std::memcmp(head.data(), kVolgMagic, 8) != 0)
        throw InvalidArgument("'" + path.string() + "' is not a VOLG file");
    std::uint32_t len = 0;
    std::memcpy(&len, head.data() + 8, 4);
    std::string text(len, '\0');
    is.read(text.data(), len);
    if (static_cast<std::uint32_t>(is.gcount()) != len) throw InvalidArgument("'" + path.string() + "': truncated header");
    try {
        return parse_header(json::parse(text));
    } catch (const json::exception& e) {
        throw InvalidArgument("'" + path.string() + "': header is not valid JSON: " + e.what());
    }
}

VolgFile read_volg(const fs::path& path)
{
    const auto bytes = read_bytes(path);
    auto [j, offset] = split_frame(bytes, kVolgMagic, path);
    VolgFile f;
    f.header = parse_header(j);
    const auto n = static_cast<std::size_t>(f.header.shape.voxels());
    const std::size_t expected = n * dtype_bytes(f.header.dtype);
    const std::size_t actual = bytes.size() - offset;
    if (actual != expected)
        throw InvalidArgument("'" + path.string() + "': header declares " + std::to_string(n) + " voxels (" +
                              std::to_string(expected) + " bytes) but payload has " + std::to_string(actual) + " bytes");
    const char* p = bytes.data() + offset;
    switch (f.header.dtype) {
    case DType::f32: {
        std::vector<float> v(n);
        std::memcpy(v.data(), p, expected);
        for (float x : v)
            if (!std::isfinite(x)) throw InvalidArgument("'" + path.string() + "': payload contains NaN/Inf");
        f.payload = std::move(v);
        break;
    }
    case DType::u8: {
        std::vector<std::uint8_t> v(n);
        std::memcpy(v.data(), p, expected);
        f.payload = std::move(v);
        break;
    }
    case DType::u16: {
        std::vector<std::uint16_t> v(n);
        std::memcpy(v.data(), p, expected);
        f.payload = std::move(v);
        break;
    }
    }
    return f;
}

namespace {

std::vector<float> widen(const VolgFile& f)
{
    return std::visit(
        [](const auto& v) {
            std::vector<float> out(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
            return out;
        },
        f.payload);
}

} // namespace

Volume3D load_volume(const fs::path& path, Provenance* provenance)
{
    auto f = read_volg(path);
    if (provenance) *provenance = f.header.provenance;
    return Volume3D(f.header.shape, f.header.voxel_size, widen(f), f.header.dtype);
}

LabelVolume load_labels(const fs::path& path, Provenance* provenance)
{
    auto f = read_volg(path);
    if (f.header.dtype != DType::u8) throw InvalidArgument("'" + path.string() + "': label payloads must be u8");
    if (provenance) *provenance = f.header.provenance;
    const auto& raw = std::get<std::vector<std::uint8_t>>(f.payload);
    std::vector<Label> labels(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] > 2) throw InvalidArgument("'" + path.string() + "': label value out of {0,1,2}");
        labels[i] = static_cast<Label>(raw[i]);
    }
    return LabelVolume(f.header.shape, f.header.voxel_size, std::move(labels));
}

ProbVolume load_probs(const fs::path& path, Provenance* provenance)
{
    auto f = read_volg(path);
    if (f.header.dtype != DType::f32) throw InvalidArgument("'" + path.string() + "': prob payloads must be f32");
    if (provenance) *provenance = f.header.provenance;
    return ProbVolume(f.header.shape, f.header.voxel_size, std::get<std::vector<float>>(std::move(f.payload)));
}

std::vector<char> encode_volume(const Volume3D& v, const Provenance& provenance)
{
    VolgHeader h{v.shape(), v.voxel_size(), v.dtype(), VolgKind::intensity, provenance};
    std::vector<char> payload;
    const auto data = v.data();
    switch (v.dtype()) {
    case DType::f32: append_raw(payload, data); break;
    case DType::u8: {
        std::vector<std::uint8_t> raw(data.begin(), data.end());
        append_raw(payload, std::span<const std::uint8_t>(raw));
        break;
    }
    case DType::u16: {
        std::vector<std::uint16_t> raw(data.begin(), data.end());
        append_raw(payload, std::span<const std::uint16_t>(raw));
        break;
    }
    }
    return encode(h, payload);
}

void save_volume(const Volume3D& v, const fs::path& path, const Provenance& provenance)
{
    write_bytes(path, encode_volume(v, provenance));
}

void save_labels(const LabelVolume& v, const fs::path& path, const Provenance& provenance)
{
    VolgHeader h{v.shape(), v.voxel_size(), DType::u8, VolgKind::labels, provenance};
    std::vector<char> payload;
    append_raw(payload, v.labels());
    write_bytes(path, encode(h, payload));
}

void save_probs(const ProbVolume& v, const fs::path& path, const Provenance& provenance)
{
    VolgHeader h{v.shape(), v.voxel_size(), DType::f32, VolgKind::probs, provenance};
    std::vector<char> payload;
    append_raw(payload, v.probs());
    write_bytes(path, encode(h, payload));
}

} // namespace pseudoseg
