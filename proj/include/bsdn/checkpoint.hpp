#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bsdn/image.hpp"
#include "bsdn/network.hpp"

namespace bsdn {

static_assert(std::endian::native == std::endian::little, "serializer assumes a little-endian host");

// One serialization format for checkpoints and float image intermediates:
// magic "BSDN", u32 version, ordered key/value metadata block, then named
// f32 tensors (name, rank, dims, raw little-endian data). Entry order is
// preserved so save -> load -> save is bytewise identical.
struct TensorRecord {
    std::string name;
    std::vector<int> dims;
    std::vector<float> data;
};

class Container {
public:
    static constexpr char kMagic[4] = {'B', 'S', 'D', 'N'};
    static constexpr uint32_t kVersion = 1;

    void set(const std::string& key, const std::string& val) {
        for (auto& kv : meta_)
            if (kv.first == key) {
                kv.second = val;
                return;
            }
        meta_.emplace_back(key, val);
    }
    void set(const std::string& key, double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        set(key, ss.str());
    }
    void set(const std::string& key, int64_t v) { set(key, std::to_string(v)); }

    bool has(const std::string& key) const {
        for (const auto& kv : meta_)
            if (kv.first == key) return true;
        return false;
    }
    std::string get(const std::string& key) const {
        for (const auto& kv : meta_)
            if (kv.first == key) return kv.second;
        throw std::out_of_range("container: missing key '" + key + "'");
    }
    std::string get_or(const std::string& key, const std::string& dflt) const {
        return has(key) ? get(key) : dflt;
    }
    double get_double(const std::string& key) const { return std::stod(get(key)); }
    int64_t get_int(const std::string& key) const { return std::stoll(get(key)); }

    const std::vector<std::pair<std::string, std::string>>& meta() const { return meta_; }

    void add_tensor(TensorRecord rec) { tensors_.push_back(std::move(rec)); }
    const std::vector<TensorRecord>& tensors() const { return tensors_; }
    const TensorRecord* find_tensor(const std::string& name) const {
        for (const auto& t : tensors_)
            if (t.name == name) return &t;
        return nullptr;
    }
    bool has_tensor_prefix(const std::string& prefix) const {
        for (const auto& t : tensors_)
            if (t.name.rfind(prefix, 0) == 0) return true;
        return false;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open for writing: " + path);
        f.write(kMagic, 4);
        write_u32(f, kVersion);
        write_u32(f, static_cast<uint32_t>(meta_.size()));
        for (const auto& [k, v] : meta_) {
            write_u16(f, static_cast<uint16_t>(k.size()));
            f.write(k.data(), static_cast<std::streamsize>(k.size()));
            write_u32(f, static_cast<uint32_t>(v.size()));
            f.write(v.data(), static_cast<std::streamsize>(v.size()));
        }
        write_u32(f, static_cast<uint32_t>(tensors_.size()));
        for (const auto& t : tensors_) {
            write_u16(f, static_cast<uint16_t>(t.name.size()));
            f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
            f.put(static_cast<char>(t.dims.size()));
            int64_t count = 1;
            for (int d : t.dims) {
                write_u32(f, static_cast<uint32_t>(d));
                count *= d;
            }
            if (count != static_cast<int64_t>(t.data.size()))
                throw std::logic_error("container: tensor '" + t.name + "' dims/data mismatch");
            write_u64(f, static_cast<uint64_t>(t.data.size()));
            f.write(reinterpret_cast<const char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        }
        if (!f) throw std::runtime_error("write failed: " + path);
    }

    static Container load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open: " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad magic in " + path);
        const uint32_t version = read_u32(f);
        if (version != kVersion) throw std::runtime_error("unsupported container version in " + path);
        Container c;
        const uint32_t nmeta = read_u32(f);
        for (uint32_t i = 0; i < nmeta; ++i) {
            std::string k(read_u16(f), '\0');
            f.read(k.data(), static_cast<std::streamsize>(k.size()));
            std::string v(read_u32(f), '\0');
            f.read(v.data(), static_cast<std::streamsize>(v.size()));
            c.meta_.emplace_back(std::move(k), std::move(v));
        }
        const uint32_t ntens = read_u32(f);
        for (uint32_t i = 0; i < ntens; ++i) {
            TensorRecord t;
            t.name.resize(read_u16(f));
            f.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
            const int rank = f.get();
            int64_t count = 1;
            for (int r = 0; r < rank; ++r) {
                t.dims.push_back(static_cast<int>(read_u32(f)));
                count *= t.dims.back();
            }
            const uint64_t n = read_u64(f);
            if (static_cast<int64_t>(n) != count) throw std::runtime_error("corrupt tensor record in " + path);
            t.data.resize(n);
            f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
            c.tensors_.push_back(std::move(t));
        }
        if (!f) throw std::runtime_error("truncated container: " + path);
        return c;
    }

private:
    static void write_u16(std::ostream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
    static void write_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
    static void write_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
    static uint16_t read_u16(std::istream& f) {
        uint16_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 2);
        return v;
    }
    static uint32_t read_u32(std::istream& f) {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    }
    static uint64_t read_u64(std::istream& f) {
        uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }

    std::vector<std::pair<std::string, std::string>> meta_;
    std::vector<TensorRecord> tensors_;
};

// ---- network weights <-> container -----------------------------------------

template <typename T>
void store_network(Container& c, const Network<T>& net, const std::string& prefix) {
    for (const auto& [name, tensor] : net.named_parameters()) {
        TensorRecord rec;
        rec.name = prefix + name;
        rec.dims = tensor->shape;
        rec.data.resize(tensor->val.size());
        for (size_t i = 0; i < rec.data.size(); ++i) rec.data[i] = static_cast<float>(tensor->val[i]);
        c.add_tensor(std::move(rec));
    }
}

template <typename T>
void load_network(const Container& c, Network<T>& net, const std::string& prefix) {
    for (const auto& [name, tensor] : net.named_parameters()) {
        const TensorRecord* rec = c.find_tensor(prefix + name);
        if (!rec) throw std::runtime_error("checkpoint: missing tensor '" + prefix + name + "'");
        if (rec->dims != tensor->shape)
            throw std::runtime_error("checkpoint: shape mismatch for tensor '" + prefix + name + "'");
        for (size_t i = 0; i < rec->data.size(); ++i) tensor->val[i] = static_cast<T>(rec->data[i]);
    }
}

inline void store_network_config(Container& c, const NetworkConfig& cfg, const std::string& prefix) {
    c.set(prefix + "depth", static_cast<int64_t>(cfg.depth));
    c.set(prefix + "enc_width", static_cast<int64_t>(cfg.enc_width));
    c.set(prefix + "dec_width", static_cast<int64_t>(cfg.dec_width));
    c.set(prefix + "in_channels", static_cast<int64_t>(cfg.in_channels));
    c.set(prefix + "out_channels", static_cast<int64_t>(cfg.out_channels));
    c.set(prefix + "blind_spot", static_cast<int64_t>(cfg.blind_spot ? 1 : 0));
}

inline NetworkConfig load_network_config(const Container& c, const std::string& prefix) {
    NetworkConfig cfg;
    cfg.depth = static_cast<int>(c.get_int(prefix + "depth"));
    cfg.enc_width = static_cast<int>(c.get_int(prefix + "enc_width"));
    cfg.dec_width = static_cast<int>(c.get_int(prefix + "dec_width"));
    cfg.in_channels = static_cast<int>(c.get_int(prefix + "in_channels"));
    cfg.out_channels = static_cast<int>(c.get_int(prefix + "out_channels"));
    cfg.blind_spot = c.get_int(prefix + "blind_spot") != 0;
    return cfg;
}

// ---- float image container (unclamped corrupted intermediates) -------------

inline void save_float_image(const std::string& path, const Image& img) {
    Container c;
    c.set("kind", "image");
    TensorRecord rec;
    rec.name = "image";
    rec.dims = {img.c, img.h, img.w};
    rec.data = img.data;
    c.add_tensor(std::move(rec));
    c.save(path);
}

inline Image load_float_image(const std::string& path) {
    Container c = Container::load(path);
    if (c.get_or("kind", "") != "image") throw std::runtime_error("not a float image container: " + path);
    const TensorRecord* rec = c.find_tensor("image");
    if (!rec || rec->dims.size() != 3) throw std::runtime_error("corrupt float image container: " + path);
    Image img(rec->dims[1], rec->dims[2], rec->dims[0]);
    img.data = rec->data;
    return img;
}

}  // namespace bsdn
