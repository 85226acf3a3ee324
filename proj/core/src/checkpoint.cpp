#include "attnseg/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "attnseg/config.hpp"
#include "attnseg/errors.hpp"

namespace attnseg {

namespace {

constexpr std::array<char, 4> kMagic = {'A', 'T', 'S', 'G'};

template <class U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) { put_le(out, v); }

template <class T>
void put_scalars(std::string& out, std::span<const T> values) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (T v : values) {
        Bits b;
        std::memcpy(&b, &v, sizeof(T));
        put_le(out, b);
    }
}

class Reader {
public:
    Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    const char* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw DataError(name_ + ": truncated checkpoint");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    template <class U>
    U le() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(U)));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
        return v;
    }

    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::string str(std::size_t n) { return std::string(take(n), n); }

    template <class Stored>
    Stored scalar() {
        using Bits = std::conditional_t<sizeof(Stored) == 4, std::uint32_t, std::uint64_t>;
        const Bits b = le<Bits>();
        Stored v;
        std::memcpy(&v, &b, sizeof(Stored));
        return v;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }
    const std::string& name() const noexcept { return name_; }

private:
    std::string bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

Reader open_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingDataError("checkpoint not found: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), path.string());
}

CheckpointInfo read_header(Reader& r) {
    if (std::memcmp(r.take(4), kMagic.data(), 4) != 0)
        throw DataError(r.name() + ": not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError(r.name() + ": unsupported checkpoint version " + std::to_string(version));
    CheckpointInfo info;
    const std::uint32_t scalar_bytes = r.u32();
    if (scalar_bytes == 4)
        info.precision = Precision::Single;
    else if (scalar_bytes == 8)
        info.precision = Precision::Double;
    else
        throw DataError(r.name() + ": unsupported scalar width " + std::to_string(scalar_bytes));
    const std::string header = r.str(r.u32());
    try {
        const auto j = nlohmann::json::parse(header);
        info.config_digest = j.at("config_digest").get<std::string>();
        info.model = parse_model_config(j.at("model").dump());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(r.name() + ": malformed checkpoint header: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(r.name() + ": checkpoint model config invalid: " + e.what());
    }
    info.record_count = r.u32();
    return info;
}

template <class T, class Stored>
void read_payload(Reader& r, Tensor4<T>& dst) {
    for (T& v : dst.span()) v = static_cast<T>(r.scalar<Stored>());
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const std::string& config_digest) {
    std::string out(kMagic.begin(), kMagic.end());
    put_u32(out, kCheckpointVersion);
    put_u32(out, sizeof(T));
    const nlohmann::json header{{"config_digest", config_digest},
                                {"model", nlohmann::json::parse(model_config_json(model.config()))}};
    const std::string header_text = header.dump();
    put_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;

    std::vector<std::pair<std::string, const Tensor4<T>*>> records;
    for (const Param<T>* p : model.params()) records.emplace_back(p->name, &p->value);
    for (const ConstBuffer<T>& b : model.buffers()) records.emplace_back(b.name, b.tensor);
    put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, t] : records) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        const Shape s = t->shape();
        for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
        put_scalars<T>(out, t->span());
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("failed writing " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
    Reader r = open_checkpoint(path);
    return read_header(r);
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info_out) {
    Reader r = open_checkpoint(path);
    const CheckpointInfo info = read_header(r);
    Model<T> model(info.model);

    std::vector<std::pair<std::string, Tensor4<T>*>> slots;
    for (Param<T>* p : model.params()) slots.emplace_back(p->name, &p->value);
    for (const Buffer<T>& b : model.buffers()) slots.emplace_back(b.name, b.tensor);
    if (info.record_count != slots.size())
        throw DataError(r.name() + ": " + std::to_string(info.record_count) +
                        " records but the configured model has " + std::to_string(slots.size()));

    for (const auto& [expected, dst] : slots) {
        const std::string name = r.str(r.u32());
        if (name != expected)
            throw DataError(r.name() + ": record '" + name + "' where '" + expected + "' was expected");
        Shape s;
        s.n = static_cast<int>(r.u32());
        s.c = static_cast<int>(r.u32());
        s.h = static_cast<int>(r.u32());
        s.w = static_cast<int>(r.u32());
        if (s != dst->shape())
            throw DataError(r.name() + ": record '" + name + "' has shape " + s.str() +
                            ", model expects " + dst->shape().str());
        if (info.precision == Precision::Single)
            read_payload<T, float>(r, *dst);
        else
            read_payload<T, double>(r, *dst);
    }
    if (!r.done()) throw DataError(r.name() + ": trailing bytes after the last record");
    if (info_out != nullptr) *info_out = info;
    return model;
}

template void save_checkpoint(const std::filesystem::path&, const Model<float>&, const std::string&);
template void save_checkpoint(const std::filesystem::path&, const Model<double>&, const std::string&);
template Model<float> load_checkpoint(const std::filesystem::path&, CheckpointInfo*);
template Model<double> load_checkpoint(const std::filesystem::path&, CheckpointInfo*);

}  // namespace attnseg
