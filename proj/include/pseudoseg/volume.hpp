#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace pseudoseg {

/// Grid extent in (Z, Y, X) order. Every volume in the library uses this order.
struct Shape3 {
    std::int64_t z = 0;
    std::int64_t y = 0;
    std::int64_t x = 0;

    std::int64_t voxels() const { return z * y * x; }
    bool positive() const { return z > 0 && y > 0 && x > 0; }
    std::int64_t index(std::int64_t iz, std::int64_t iy, std::int64_t ix) const { return (iz * y + iy) * x + ix; }
    bool contains(std::int64_t iz, std::int64_t iy, std::int64_t ix) const
    {
        return iz >= 0 && iz < z && iy >= 0 && iy < y && ix >= 0 && ix < x;
    }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

/// Physical voxel extent in micrometers, (Z, Y, X) order.
struct VoxelSize {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    bool positive() const { return z > 0 && y > 0 && x > 0; }
    friend bool operator==(const VoxelSize&, const VoxelSize&) = default;
};

/// Storage type of an intensity payload on disk.
enum class DType { f32, u8, u16 };

std::string to_string(DType t);
DType dtype_from_string(const std::string& s);

enum class Label : std::uint8_t { background = 0, foreground = 1, unlabeled = 2 };

/// Scalar intensity grid: the image data.
class Volume3D {
public:
    Volume3D() = default;
    Volume3D(Shape3 shape, VoxelSize voxel_size, std::vector<float> data, DType dtype = DType::f32);
    /// Zero-filled volume.
    Volume3D(Shape3 shape, VoxelSize voxel_size, DType dtype = DType::f32);

    const Shape3& shape() const { return shape_; }
    const VoxelSize& voxel_size() const { return voxel_size_; }
    DType dtype() const { return dtype_; }
    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }
    float at(std::int64_t z, std::int64_t y, std::int64_t x) const { return data_[static_cast<std::size_t>(shape_.index(z, y, x))]; }
    float& at(std::int64_t z, std::int64_t y, std::int64_t x) { return data_[static_cast<std::size_t>(shape_.index(z, y, x))]; }

    /// Throws InvalidArgument on non-finite data or values unrepresentable in dtype.
    void validate() const;

    friend bool operator==(const Volume3D&, const Volume3D&) = default;

private:
    Shape3 shape_;
    VoxelSize voxel_size_;
    DType dtype_ = DType::f32;
    std::vector<float> data_;
};

/// Tri-state annotation. Voxels != unlabeled form the labeled partition.
class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(Shape3 shape, VoxelSize voxel_size, std::vector<Label> labels);
    LabelVolume(Shape3 shape, VoxelSize voxel_size, Label fill);

    const Shape3& shape() const { return shape_; }
    const VoxelSize& voxel_size() const { return voxel_size_; }
    std::span<const Label> labels() const { return labels_; }
    std::span<Label> labels() { return labels_; }
    Label at(std::int64_t z, std::int64_t y, std::int64_t x) const { return labels_[static_cast<std::size_t>(shape_.index(z, y, x))]; }
    Label& at(std::int64_t z, std::int64_t y, std::int64_t x) { return labels_[static_cast<std::size_t>(shape_.index(z, y, x))]; }

    std::int64_t count(Label l) const;
    std::int64_t labeled_count() const { return shape_.voxels() - count(Label::unlabeled); }
    bool dense() const { return count(Label::unlabeled) == 0; }

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

private:
    Shape3 shape_;
    VoxelSize voxel_size_;
    std::vector<Label> labels_;
};

/// Per-voxel probabilities in [0, 1].
class ProbVolume {
public:
    ProbVolume() = default;
    ProbVolume(Shape3 shape, VoxelSize voxel_size, std::vector<float> probs);

    const Shape3& shape() const { return shape_; }
    const VoxelSize& voxel_size() const { return voxel_size_; }
    std::span<const float> probs() const { return probs_; }
    float at(std::int64_t z, std::int64_t y, std::int64_t x) const { return probs_[static_cast<std::size_t>(shape_.index(z, y, x))]; }

    friend bool operator==(const ProbVolume&, const ProbVolume&) = default;

private:
    Shape3 shape_;
    VoxelSize voxel_size_;
    std::vector<float> probs_;
};

/// Traceability record embedded in every artifact written by the pipeline.
struct Provenance {
    std::string config_hash;
    std::string stage;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();

    bool empty() const { return config_hash.empty() && stage.empty(); }
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);

} // namespace pseudoseg
