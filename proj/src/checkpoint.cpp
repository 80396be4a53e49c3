#include "rbtn/checkpoint.hpp"

#include "rbtn/error.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace rbtn {

namespace {

constexpr char kMagic[8] = {'R', 'B', 'T', 'N', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename V>
    void pod(const V& v) {
        out_.append(reinterpret_cast<const char*>(&v), sizeof(V));
    }
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void str(const std::string& s) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}
    template <typename V>
    V pod() {
        V v;
        read(&v, sizeof(V));
        return v;
    }
    void read(void* p, std::size_t n) {
        if (pos_ + n > in_.size()) throw IoError("checkpoint: truncated file");
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        if (pos_ + n > in_.size()) throw IoError("checkpoint: truncated string");
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    const std::string& in_;
    std::size_t pos_ = 0;
};

template <typename T>
void write_params(Writer& w, const ParamSet<T>& p) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
        w.str(p.names[i]);
        w.pod<std::int64_t>(p.values[i].rows());
        w.pod<std::int64_t>(p.values[i].cols());
        w.bytes(p.values[i].data(), sizeof(T) * static_cast<std::size_t>(p.values[i].size()));
    }
}

template <typename S, typename T>
void read_params_into(Reader& r, ParamSet<T>& dst, const char* which) {
    const auto n = r.pod<std::uint32_t>();
    if (n != dst.size()) throw IoError(std::string("checkpoint: parameter count mismatch in ") + which);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        const auto rows = r.pod<std::int64_t>();
        const auto cols = r.pod<std::int64_t>();
        if (name != dst.names[i] || rows != dst.values[i].rows() || cols != dst.values[i].cols())
            throw IoError(std::string("checkpoint: parameter '") + name + "' does not match architecture in " + which);
        Matrix<S> m(rows, cols);
        r.read(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()));
        dst.values[i] = m.template cast<T>();
    }
}

template <typename S, typename T>
Checkpoint<T> read_body(Reader& r, const ArchConfig& arch) {
    Checkpoint<T> ck;
    ck.bundle = build_models<T>(arch);
    ck.epoch = r.pod<std::int64_t>();
    read_params_into<S>(r, ck.bundle.f.params(), "f");
    read_params_into<S>(r, ck.bundle.F.params(), "F");
    read_params_into<S>(r, ck.bundle.D.params(), "D");
    const auto has_opt = r.pod<std::uint8_t>();
    if (has_opt) {
        OptimizerStates<T> opt = fresh_optimizer_states(ck.bundle);
        for (auto* st : {&opt.D, &opt.f, &opt.F}) {
            st->step = r.pod<std::int64_t>();
            read_params_into<S>(r, st->m, "optimizer");
            read_params_into<S>(r, st->v, "optimizer");
        }
        ck.optimizer = std::move(opt);
    }
    if (!r.done()) throw IoError("checkpoint: trailing bytes");
    return ck;
}

} // namespace

template <typename T>
std::string serialize_checkpoint(const ModelBundle<T>& bundle, const OptimizerStates<T>* optimizer, std::int64_t epoch) {
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(sizeof(T)));
    w.pod<std::int64_t>(bundle.arch.image_size);
    w.pod<std::int64_t>(bundle.arch.depth);
    w.pod<std::int64_t>(bundle.arch.base_channels);
    w.pod<std::uint64_t>(bundle.arch.seed);
    w.pod<std::int64_t>(epoch);
    write_params(w, bundle.f.params());
    write_params(w, bundle.F.params());
    write_params(w, bundle.D.params());
    w.pod<std::uint8_t>(optimizer ? 1 : 0);
    if (optimizer) {
        for (const auto* st : {&optimizer->D, &optimizer->f, &optimizer->F}) {
            w.pod<std::int64_t>(st->step);
            write_params(w, st->m);
            write_params(w, st->v);
        }
    }
    return w.take();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    char magic[8];
    r.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("checkpoint: bad magic");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const auto scalar = r.pod<std::uint32_t>();
    ArchConfig arch;
    arch.image_size = static_cast<int>(r.pod<std::int64_t>());
    arch.depth = static_cast<int>(r.pod<std::int64_t>());
    arch.base_channels = static_cast<int>(r.pod<std::int64_t>());
    arch.seed = r.pod<std::uint64_t>();
    arch.validate();
    if (scalar == sizeof(float)) return read_body<float, T>(r, arch);
    if (scalar == sizeof(double)) return read_body<double, T>(r, arch);
    throw IoError("checkpoint: unknown scalar tag " + std::to_string(scalar));
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelBundle<T>& bundle,
                     const OptimizerStates<T>* optimizer, std::int64_t epoch) {
    const std::string bytes = serialize_checkpoint(bundle, optimizer, epoch);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint<T>(ss.str());
}

#define RBTN_INSTANTIATE_CKPT(T)                                                                               \
    template std::string serialize_checkpoint(const ModelBundle<T>&, const OptimizerStates<T>*, std::int64_t); \
    template Checkpoint<T> deserialize_checkpoint<T>(const std::string&);                                      \
    template void save_checkpoint(const std::filesystem::path&, const ModelBundle<T>&, const OptimizerStates<T>*, \
                                  std::int64_t);                                                               \
    template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

RBTN_INSTANTIATE_CKPT(float)
RBTN_INSTANTIATE_CKPT(double)

} // namespace rbtn
