#include "pseudoseg/model_io.hpp"

#include <cmath>
#include <cstring>

#include "pseudoseg/error.hpp"
#include "pseudoseg/rng.hpp"
#include "pseudoseg/volg.hpp"

namespace pseudoseg {

using nlohmann::json;

namespace {
constexpr char kCheckpointMagic[9] = "VOLGCKPT";
}

void HyperParams::validate() const
{
    require(std::isfinite(lr) && lr > 0, "lr must be > 0");
    require(batch_size > 0, "batch_size must be > 0");
    require(patches_per_epoch > 0, "patches_per_epoch must be > 0");
    require(epochs > 0, "epochs must be > 0");
    require(optimizer == "adam", "unsupported optimizer '" + optimizer + "' (only 'adam')");
    require(patience >= 0, "patience must be >= 0");
    require(min_delta >= 0, "min_delta must be >= 0");
    require(fg_bias >= 0 && fg_bias <= 1, "fg_bias must be in [0,1]");
}

void to_json(json& j, const HyperParams& h)
{
    j = json{{"lr", h.lr},           {"batch_size", h.batch_size}, {"patches_per_epoch", h.patches_per_epoch},
             {"epochs", h.epochs},   {"seed", h.seed},             {"optimizer", h.optimizer},
             {"patience", h.patience}, {"min_delta", h.min_delta}, {"fg_bias", h.fg_bias},
             {"augment", h.augment}};
}

void from_json(const json& j, HyperParams& h)
{
    h.lr = j.at("lr").get<double>();
    h.batch_size = j.at("batch_size").get<std::int64_t>();
    h.patches_per_epoch = j.at("patches_per_epoch").get<std::int64_t>();
    h.epochs = j.at("epochs").get<std::int64_t>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.optimizer = j.at("optimizer").get<std::string>();
    h.patience = j.at("patience").get<std::int64_t>();
    h.min_delta = j.at("min_delta").get<double>();
    h.fg_bias = j.at("fg_bias").get<double>();
    h.augment = j.at("augment").get<bool>();
}

IntensityNorm IntensityNorm::fit(const std::vector<const Volume3D*>& volumes)
{
    double sum = 0, sq = 0;
    double n = 0;
    for (const auto* v : volumes)
        for (float x : v->data()) {
            sum += x;
            sq += static_cast<double>(x) * x;
            n += 1;
        }
    require(n > 0, "cannot fit intensity normalization on empty data");
    const double mean = sum / n;
    const double var = std::max(sq / n - mean * mean, 0.0);
    return IntensityNorm{mean, var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0};
}

void to_json(json& j, const IntensityNorm& n)
{
    j = json{{"shift", n.shift}, {"scale", n.scale}};
}

void from_json(const json& j, IntensityNorm& n)
{
    n.shift = j.at("shift").get<double>();
    n.scale = j.at("scale").get<double>();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    json tensors = json::array();
    std::vector<char> payload;
    for (const auto& p : ckpt.params) {
        tensors.push_back({{"name", p.name}, {"dims", p.value.dims()}});
        const auto* bytes = reinterpret_cast<const char*>(p.value.ptr());
        payload.insert(payload.end(), bytes, bytes + p.value.size() * sizeof(float));
    }
    json header{{"model", ckpt.model},   {"spec", ckpt.spec}, {"norm", ckpt.norm}, {"seed", ckpt.seed},
                {"epoch", ckpt.epoch},   {"tensors", tensors}};
    if (!ckpt.provenance.empty()) header["provenance"] = ckpt.provenance;
    write_framed(path, kCheckpointMagic, header, payload);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    auto [header, payload] = read_framed(path, kCheckpointMagic);
    Checkpoint c;
    try {
        c.model = header.at("model").get<std::string>();
        c.spec = header.at("spec");
        c.norm = header.at("norm").get<IntensityNorm>();
        c.seed = header.at("seed").get<std::uint64_t>();
        c.epoch = header.at("epoch").get<std::int64_t>();
        if (header.contains("provenance")) c.provenance = header.at("provenance").get<Provenance>();
        std::size_t offset = 0;
        for (const auto& t : header.at("tensors")) {
            Tensor<float> value(t.at("dims").get<std::vector<std::int64_t>>());
            const std::size_t bytes = value.size() * sizeof(float);
            if (offset + bytes > payload.size()) throw InvalidArgument("checkpoint payload truncated");
            std::memcpy(value.ptr(), payload.data() + offset, bytes);
            offset += bytes;
            c.params.emplace_back(t.at("name").get<std::string>(), std::move(value));
        }
        if (offset != payload.size()) throw InvalidArgument("checkpoint payload has trailing bytes");
    } catch (const json::exception& e) {
        throw InvalidArgument("'" + path.string() + "': malformed checkpoint header: " + e.what());
    }
    if (!all_finite(c.params)) throw NumericalError("'" + path.string() + "': checkpoint holds non-finite parameters");
    return c;
}

template <typename T>
void init_uniform(Tensor<T>& t, std::int64_t fan_in, double gain, Rng& rng)
{
    const double bound = std::sqrt(gain / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
bool all_finite(const std::vector<nn::Param<T>>& params)
{
    for (const auto& p : params)
        for (T v : p.value.data())
            if (!std::isfinite(v)) return false;
    return true;
}

template void init_uniform<float>(Tensor<float>&, std::int64_t, double, Rng&);
template void init_uniform<double>(Tensor<double>&, std::int64_t, double, Rng&);
template bool all_finite<float>(const std::vector<nn::Param<float>>&);
template bool all_finite<double>(const std::vector<nn::Param<double>>&);

} // namespace pseudoseg
