#include "ircan/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ircan/errors.hpp"
#include "ircan/json_io.hpp"

namespace ircan {

namespace {

template <class T>
void put_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const char* p) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

std::size_t align_up(std::size_t n) { return (n + kCheckpointAlign - 1) / kCheckpointAlign * kCheckpointAlign; }

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::string serialize_checkpoint(const TransformerModel& model, DType dtype) {
    json manifest = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : model.weights()) {
        const std::size_t nbytes = t->numel() * dtype_size(dtype);
        manifest.push_back(json{{"name", name},
                                {"dtype", dtype == DType::f32 ? "f32" : "f64"},
                                {"shape", t->shape()},
                                {"offset", offset},
                                {"nbytes", nbytes}});
        offset = align_up(offset + nbytes);
    }
    json header;
    header["config"] = model.config();
    header["tokenizer"] = model.tokenizer().table();
    header["tensors"] = manifest;
    json plans = json::array();
    if (model.edit_state()) {
        for (const auto& p : model.edit_state()->plans) plans.push_back(p);
    } else {
        for (const auto& p : model.recorded_plans()) plans.push_back(p);
    }
    header["edit_plans"] = plans;
    const std::string hs = header.dump();

    std::string out = "IRCN";
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, hs.size());
    out += hs;
    out.resize(align_up(out.size()), '\0');
    const std::size_t payload = out.size();
    for (const auto& [name, t] : model.weights()) {
        for (double v : t->raw()) {
            if (dtype == DType::f32) put_le<float>(out, static_cast<float>(v));
            else put_le<double>(out, v);
        }
        out.resize(payload + align_up(out.size() - payload), '\0');
    }
    return out;
}

TransformerModel deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "IRCN") != 0) throw FormatError("bad magic: not an IRCN checkpoint");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto hlen = get_le<std::uint64_t>(bytes.data() + 8);
    if (hlen > bytes.size() - 16) throw FormatError("truncated header");
    json header;
    try {
        header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed header JSON: ") + e.what());
    }

    const std::size_t payload = align_up(16 + hlen);
    const std::size_t available = bytes.size() > payload ? bytes.size() - payload : 0;
    try {
        ModelConfig cfg = header.at("config").get<ModelConfig>();
        Tokenizer tok(header.at("tokenizer").get<std::vector<std::string>>());

        struct Entry {
            std::string name;
            DType dtype;
            Shape shape;
            std::size_t offset, nbytes;
        };
        std::vector<Entry> entries;
        for (const auto& e : header.at("tensors")) {
            Entry en;
            en.name = e.at("name").get<std::string>();
            const auto dt = e.at("dtype").get<std::string>();
            if (dt == "f32") en.dtype = DType::f32;
            else if (dt == "f64") en.dtype = DType::f64;
            else throw FormatError("tensor '" + en.name + "' has unsupported dtype '" + dt + "'");
            en.shape = e.at("shape").get<Shape>();
            en.offset = e.at("offset").get<std::size_t>();
            en.nbytes = e.at("nbytes").get<std::size_t>();
            if (en.nbytes != shape_numel(en.shape) * dtype_size(en.dtype)) {
                throw FormatError("tensor '" + en.name + "' byte count does not match its shape");
            }
            if (en.offset % kCheckpointAlign != 0) throw FormatError("tensor '" + en.name + "' is not 64-byte aligned");
            entries.push_back(std::move(en));
        }
        std::vector<const Entry*> by_offset;
        for (const auto& e : entries) by_offset.push_back(&e);
        std::stable_sort(by_offset.begin(), by_offset.end(),
                         [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
        for (std::size_t i = 0; i < by_offset.size(); ++i) {
            const Entry& e = *by_offset[i];
            if (i + 1 < by_offset.size() && e.offset + e.nbytes > by_offset[i + 1]->offset) {
                throw FormatError("tensor '" + e.name + "' overlaps tensor '" + by_offset[i + 1]->name + "'");
            }
            if (e.offset + e.nbytes > available) {
                throw FormatError("payload truncated: cannot read tensor '" + e.name + "'");
            }
        }

        std::map<std::string, Tensor> weights;
        for (const auto& e : entries) {
            std::vector<double> data(shape_numel(e.shape));
            const char* p = bytes.data() + payload + e.offset;
            for (std::size_t i = 0; i < data.size(); ++i) {
                data[i] = e.dtype == DType::f32 ? static_cast<double>(get_le<float>(p + 4 * i)) : get_le<double>(p + 8 * i);
            }
            if (!weights.emplace(e.name, Tensor(e.shape, std::move(data))).second) {
                throw FormatError("tensor '" + e.name + "' listed twice");
            }
        }
        TransformerModel model(cfg, std::move(tok), std::move(weights));
        if (header.contains("edit_plans")) model.set_recorded_plans(header["edit_plans"].get<std::vector<EditPlan>>());
        return model;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
}

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path, DType dtype) {
    const std::string bytes = serialize_checkpoint(model, dtype);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing '" + path.string() + "'");
}

TransformerModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace ircan
