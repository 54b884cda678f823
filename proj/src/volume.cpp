#include "pseudoseg/volume.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/error.hpp"

namespace pseudoseg {

std::string to_string(const Shape3& s)
{
    return "(" + std::to_string(s.z) + "," + std::to_string(s.y) + "," + std::to_string(s.x) + ")";
}

std::string to_string(DType t)
{
    switch (t) {
    case DType::f32: return "f32";
    case DType::u8: return "u8";
    case DType::u16: return "u16";
    }
    return "?";
}

DType dtype_from_string(const std::string& s)
{
    if (s == "f32") return DType::f32;
    if (s == "u8") return DType::u8;
    if (s == "u16") return DType::u16;
    throw InvalidArgument("unknown dtype tag '" + s + "'");
}

namespace {

void check_geometry(const Shape3& shape, const VoxelSize& vs, std::size_t n)
{
    require(shape.positive(), "shape must be positive, got " + to_string(shape));
    require(vs.positive(), "voxel size components must be > 0");
    require(static_cast<std::int64_t>(n) == shape.voxels(),
            "data length " + std::to_string(n) + " does not match shape " + to_string(shape));
}

} // namespace

Volume3D::Volume3D(Shape3 shape, VoxelSize voxel_size, std::vector<float> data, DType dtype)
    : shape_(shape), voxel_size_(voxel_size), dtype_(dtype), data_(std::move(data))
{
    check_geometry(shape_, voxel_size_, data_.size());
    validate();
}

Volume3D::Volume3D(Shape3 shape, VoxelSize voxel_size, DType dtype)
    : Volume3D(shape, voxel_size, std::vector<float>(static_cast<std::size_t>(std::max<std::int64_t>(shape.voxels(), 0))), dtype)
{
}

void Volume3D::validate() const
{
    double hi = 0;
    switch (dtype_) {
    case DType::f32:
        for (float v : data_)
            if (!std::isfinite(v)) throw InvalidArgument("volume contains NaN/Inf");
        return;
    case DType::u8: hi = 255; break;
    case DType::u16: hi = 65535; break;
    }
    for (float v : data_)
        if (!(v >= 0 && v <= hi && std::nearbyint(v) == v))
            throw InvalidArgument("value not representable as " + to_string(dtype_));
}

LabelVolume::LabelVolume(Shape3 shape, VoxelSize voxel_size, std::vector<Label> labels)
    : shape_(shape), voxel_size_(voxel_size), labels_(std::move(labels))
{
    check_geometry(shape_, voxel_size_, labels_.size());
    for (Label l : labels_)
        require(static_cast<std::uint8_t>(l) <= 2, "label values must be in {0,1,2}");
}

LabelVolume::LabelVolume(Shape3 shape, VoxelSize voxel_size, Label fill)
    : LabelVolume(shape, voxel_size, std::vector<Label>(static_cast<std::size_t>(std::max<std::int64_t>(shape.voxels(), 0)), fill))
{
}

std::int64_t LabelVolume::count(Label l) const
{
    return std::count(labels_.begin(), labels_.end(), l);
}

ProbVolume::ProbVolume(Shape3 shape, VoxelSize voxel_size, std::vector<float> probs)
    : shape_(shape), voxel_size_(voxel_size), probs_(std::move(probs))
{
    check_geometry(shape_, voxel_size_, probs_.size());
    for (float p : probs_)
        require(p >= 0.0f && p <= 1.0f, "probabilities must lie in [0,1]");
}

void to_json(nlohmann::json& j, const Provenance& p)
{
    j = nlohmann::json{{"config_hash", p.config_hash}, {"stage", p.stage}, {"seed", p.seed}};
    if (!p.extra.empty()) j["extra"] = p.extra;
}

void from_json(const nlohmann::json& j, Provenance& p)
{
    p.config_hash = j.value("config_hash", std::string{});
    p.stage = j.value("stage", std::string{});
    p.seed = j.value("seed", std::uint64_t{0});
    p.extra = j.value("extra", nlohmann::json::object());
}

} // namespace pseudoseg
