#include "lcnn/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace lcnn {

uint32_t crc32(const uint8_t* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

struct Writer {
    std::vector<uint8_t> buf;

    void u8(uint8_t v) { buf.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }
    void floats(const float* data, size_t n) {
        for (size_t i = 0; i < n; ++i) f32(data[i]);
    }
};

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw std::runtime_error("model file truncated inside a field");
    }
    uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos++]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

void serialize(const NetworkModel& model, bool with_solver_state, long long iter,
               Writer& w) {
    w.buf.insert(w.buf.end(), {'L', 'C', 'N', 'M'});
    w.u32(kModelFormatVersion);

    const ArchOptions& opt = model.options();
    w.str(opt.arch);
    w.u32(static_cast<uint32_t>(opt.num_classes));
    w.f32(opt.width_mult);
    w.u8(opt.activation == Activation::Mfm ? 0 : 1);
    w.u8(opt.nin_mfm ? 1 : 0);
    w.f32(opt.dropout_ratio);
    w.str(kPixelScaling);
    w.str(kCropPolicy);

    auto blocks = model.param_blocks();
    w.u32(static_cast<uint32_t>(blocks.size()));
    for (const ParamBlock* b : blocks) {
        w.str(b->name);
        const auto& s = b->value.shape();
        for (int d : s) w.u32(static_cast<uint32_t>(d));
        w.floats(b->value.data(), b->value.size());
    }

    w.u8(with_solver_state ? 1 : 0);
    if (with_solver_state) {
        w.u64(static_cast<uint64_t>(iter));
        for (const ParamBlock* b : blocks) w.floats(b->vel.data(), b->vel.size());
    }

    const uint32_t crc = crc32(w.buf.data() + 4, w.buf.size() - 4);
    w.u32(crc);
}

void write_file(const std::string& path, const std::vector<uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("failed writing model file: " + path);
}

struct Parsed {
    NetworkModel model;
    bool has_solver_state = false;
    long long iter = 0;
};

Parsed parse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());

    if (buf.size() < 12 || std::memcmp(buf.data(), "LCNM", 4) != 0)
        throw std::runtime_error(path + ": not an LCNM model file");
    const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                                static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
                                static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
                                static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
    if (crc32(buf.data() + 4, buf.size() - 8) != stored_crc)
        throw std::runtime_error(path + ": checksum mismatch (corrupt or truncated file)");

    Reader r{buf, 4};
    const uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        throw std::runtime_error(path + ": unknown format version " +
                                 std::to_string(version));

    ArchOptions opt;
    opt.arch = r.str();
    opt.num_classes = static_cast<int>(r.u32());
    opt.width_mult = r.f32();
    opt.activation = r.u8() == 0 ? Activation::Mfm : Activation::Relu;
    opt.nin_mfm = r.u8() != 0;
    opt.dropout_ratio = r.f32();
    const std::string pixel_scaling = r.str();
    const std::string crop_policy = r.str();
    if (pixel_scaling != kPixelScaling || crop_policy != kCropPolicy)
        throw std::runtime_error(path + ": unknown preprocessing manifest '" +
                                 pixel_scaling + "' / '" + crop_policy + "'");

    Parsed parsed{NetworkModel(opt), false, 0};
    auto blocks = parsed.model.param_blocks();
    std::map<std::string, ParamBlock*> by_name;
    for (ParamBlock* b : blocks) by_name[b->name] = b;

    const uint32_t count = r.u32();
    if (count != blocks.size())
        throw std::runtime_error(path + ": file has " + std::to_string(count) +
                                 " parameter blocks, architecture expects " +
                                 std::to_string(blocks.size()));
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error(path + ": unexpected parameter block '" + name + "'");
        ParamBlock* b = it->second;
        by_name.erase(it);
        std::array<int, 4> dims;
        for (int& d : dims) d = static_cast<int>(r.u32());
        if (dims != b->value.shape())
            throw std::runtime_error(path + ": block '" + name + "' has shape " +
                                     std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                                     "x" + std::to_string(dims[2]) + "x" +
                                     std::to_string(dims[3]) + ", expected " +
                                     b->value.shape_string());
        for (size_t j = 0; j < b->value.size(); ++j) b->value[j] = r.f32();
    }
    if (!by_name.empty())
        throw std::runtime_error(path + ": missing parameter block '" +
                                 by_name.begin()->first + "'");

    parsed.has_solver_state = r.u8() != 0;
    if (parsed.has_solver_state) {
        parsed.iter = static_cast<long long>(r.u64());
        for (ParamBlock* b : blocks)
            for (size_t j = 0; j < b->vel.size(); ++j) b->vel[j] = r.f32();
    }
    if (r.pos != buf.size() - 4)
        throw std::runtime_error(path + ": trailing bytes after solver state");
    return parsed;
}

}  // namespace

void save_model(const NetworkModel& model, const std::string& path) {
    Writer w;
    serialize(model, false, 0, w);
    write_file(path, w.buf);
}

void save_checkpoint(const NetworkModel& model, long long iter, const std::string& path) {
    Writer w;
    serialize(model, true, iter, w);
    write_file(path, w.buf);
}

NetworkModel load_model(const std::string& path) { return std::move(parse(path).model); }

Checkpoint load_checkpoint(const std::string& path) {
    Parsed parsed = parse(path);
    if (!parsed.has_solver_state)
        throw std::runtime_error(path + ": no solver state (not a checkpoint)");
    return {std::move(parsed.model), parsed.iter};
}

}  // namespace lcnn
