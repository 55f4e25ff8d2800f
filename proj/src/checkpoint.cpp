// SPDX-License-Identifier: Apache-2.0
#include "modem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

namespace modem {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

template <typename T>
void put(std::string &out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::string &b) : bytes_(b) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::string &bytes_;
    std::size_t pos_ = 0;
};

std::string join(const std::set<std::string> &names) {
    std::string s;
    for (const auto &n : names) s += (s.empty() ? "" : ", ") + n;
    return s.empty() ? "none" : s;
}

}  // namespace

const Tensor *Checkpoint::find(const std::string &name) const {
    for (const auto &[n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::string encode_checkpoint(const Checkpoint &ckpt) {
    std::string out = "MODM";
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    put<std::uint8_t>(out, ckpt.stage);
    for (const auto &[name, t] : ckpt.tensors) {
        if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name.substr(0, 40));
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char *>(t.data().data()), t.numel() * sizeof(double));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string &bytes) {
    Reader r(bytes);
    if (r.take(4) != "MODM") throw FormatError("not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    Checkpoint ckpt;
    ckpt.stage = r.get<std::uint8_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.take(r.get<std::uint16_t>());
        const auto rank = r.get<std::uint8_t>();
        Shape shape(rank);
        std::uint64_t numel = 1;
        for (auto &d : shape) {
            d = r.get<std::uint64_t>();
            if (d == 0 || numel > (std::uint64_t{1} << 40) / d) throw FormatError("bad extents for " + name);
            numel *= d;
        }
        std::string raw = r.take(numel * sizeof(double));
        std::vector<double> data(numel);
        std::memcpy(data.data(), raw.data(), raw.size());
        ckpt.tensors.emplace_back(std::move(name), Tensor(shape, std::move(data)));
    }
    if (!r.done()) throw FormatError("trailing bytes after last tensor");
    return ckpt;
}

Checkpoint snapshot(const nn::ParamList &params, std::uint8_t stage) {
    Checkpoint c;
    c.stage = stage;
    for (const Parameter *p : params) c.tensors.emplace_back(p->name, p->value);
    return c;
}

void restore(const Checkpoint &ckpt, const nn::ParamList &params) {
    std::map<std::string, const Tensor *> stored;
    for (const auto &[n, t] : ckpt.tensors) stored[n] = &t;
    std::set<std::string> missing, extra;
    for (const auto &[n, t] : stored) extra.insert(n);
    for (const Parameter *p : params) {
        if (stored.count(p->name))
            extra.erase(p->name);
        else
            missing.insert(p->name);
    }
    if (!missing.empty() || !extra.empty())
        throw FormatError("checkpoint does not match model; missing: " + join(missing) +
                          "; extra: " + join(extra));
    for (Parameter *p : params) {
        const Tensor &t = *stored[p->name];
        if (!t.same_shape(p->value))
            throw FormatError("shape mismatch for " + p->name + ": stored " + shape_str(t.shape()) +
                              ", model " + shape_str(p->value.shape()));
    }
    for (Parameter *p : params) p->value = *stored[p->name];
}

void write_file_atomic(const std::filesystem::path &path, const std::string &bytes) {
    auto tmp = path;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path &path) { return decode_checkpoint(read_file(path)); }

}  // namespace modem
