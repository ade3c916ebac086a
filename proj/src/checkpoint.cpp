#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "carft/model.hpp"

namespace carft {

namespace {

constexpr char kMagic[] = "CARFTCKPT\n";
constexpr std::size_t kMagicLen = 10;
constexpr const char* kMetaName = "__meta";

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    bool exhausted(std::size_t need) const { return pos + need > buf.size(); }

    std::uint32_t u32() {
        if (exhausted(4)) throw DataError("checkpoint: truncated file (u32)");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        if (exhausted(8)) throw DataError("checkpoint: truncated file (u64)");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        if (exhausted(n)) throw DataError(std::string("checkpoint: truncated file (") + what + ")");
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

void write_tensor(std::string& buf, const std::string& name, const Matrix& m) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u64(buf, m.rows());
    put_u64(buf, m.cols());
    for (double v : m.values()) put_f64(buf, v);
}

Matrix vector_as_matrix(const Vector& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
    return m;
}

Vector matrix_as_vector(const Matrix& m) {
    if (m.rows() != 1) throw DataError("checkpoint: tensor-shape mismatch (expected row vector)");
    return m.values();
}

std::uint64_t fnv1a(std::uint64_t hash, const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<std::pair<std::string, Matrix>> tensors;
    tensors.emplace_back("image.w1", ckpt.image.w1);
    tensors.emplace_back("image.b1", vector_as_matrix(ckpt.image.b1));
    tensors.emplace_back("image.w2", ckpt.image.w2);
    tensors.emplace_back("image.b2", vector_as_matrix(ckpt.image.b2));
    tensors.emplace_back("text.embed", ckpt.text.embed);
    tensors.emplace_back("text.proj", ckpt.text.proj);
    Matrix tau(1, 1);
    tau(0, 0) = ckpt.logit_scale;
    tensors.emplace_back("logit_scale", tau);
    if (ckpt.head) {
        tensors.emplace_back("head.weight", ckpt.head->weight);
        if (ckpt.head->bias) tensors.emplace_back("head.bias", vector_as_matrix(*ckpt.head->bias));
    }

    std::string buf;
    buf.append(kMagic, kMagicLen);
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) write_tensor(buf, name, tensor);

    std::string meta;
    for (const auto& [key, value] : ckpt.meta) meta += key + "=" + value + "\n";
    put_u32(buf, static_cast<std::uint32_t>(std::strlen(kMetaName)));
    buf.append(kMetaName);
    put_u64(buf, meta.size());
    buf.append(meta);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r{buf};
    if (r.bytes(kMagicLen, "magic") != std::string(kMagic, kMagicLen))
        throw DataError("checkpoint: bad magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: version mismatch (got " + std::to_string(version) +
                        ", expected " + std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t count = r.u32();

    std::map<std::string, Matrix> tensors;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len, "tensor name");
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
            throw DataError("checkpoint: tensor-shape mismatch for '" + name + "'");
        Matrix m(rows, cols);
        for (std::uint64_t i = 0; i < rows * cols; ++i) m.values()[i] = r.f64();
        tensors.emplace(name, std::move(m));
    }

    Checkpoint ckpt;
    if (r.pos < buf.size()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len, "meta name");
        if (name != kMetaName) throw DataError("checkpoint: unexpected trailing block '" + name + "'");
        const std::uint64_t meta_len = r.u64();
        const std::string meta = r.bytes(meta_len, "meta payload");
        std::size_t start = 0;
        while (start < meta.size()) {
            std::size_t end = meta.find('\n', start);
            if (end == std::string::npos) end = meta.size();
            const std::string line = meta.substr(start, end - start);
            const std::size_t eq = line.find('=');
            if (eq != std::string::npos) ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
            start = end + 1;
        }
    }

    auto take = [&](const char* name) -> Matrix {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw DataError(std::string("checkpoint: missing tensor '") + name + "'");
        Matrix m = std::move(it->second);
        tensors.erase(it);
        return m;
    };

    ckpt.image.w1 = take("image.w1");
    ckpt.image.b1 = matrix_as_vector(take("image.b1"));
    ckpt.image.w2 = take("image.w2");
    ckpt.image.b2 = matrix_as_vector(take("image.b2"));
    ckpt.text.embed = take("text.embed");
    ckpt.text.proj = take("text.proj");
    const Matrix tau = take("logit_scale");
    if (tau.rows() != 1 || tau.cols() != 1)
        throw DataError("checkpoint: tensor-shape mismatch for 'logit_scale'");
    ckpt.logit_scale = tau(0, 0);

    if (tensors.count("head.weight")) {
        ClassifierHead head;
        head.weight = take("head.weight");
        if (tensors.count("head.bias")) head.bias = matrix_as_vector(take("head.bias"));
        ckpt.head = std::move(head);
    }
    if (!tensors.empty())
        throw DataError("checkpoint: unknown tensor '" + tensors.begin()->first + "'");

    // Structural consistency between the tensors.
    if (ckpt.image.w1.rows() != ckpt.image.b1.size() ||
        ckpt.image.w2.cols() != ckpt.image.w1.rows() ||
        ckpt.image.w2.rows() != ckpt.image.b2.size() ||
        ckpt.text.proj.rows() != ckpt.text.proj.cols() ||
        ckpt.text.embed.cols() != ckpt.text.proj.rows() ||
        ckpt.text.proj.rows() != ckpt.image.w2.rows())
        throw DataError("checkpoint: tensor-shape mismatch between components");
    if (ckpt.head && ckpt.head->weight.rows() != ckpt.image.w2.rows())
        throw DataError("checkpoint: tensor-shape mismatch for head");
    if (!(ckpt.logit_scale > 0.0))
        throw DataError("checkpoint: logit scale must be positive");

    return ckpt;
}

std::uint64_t tensor_checksum(const Matrix& m) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    const std::uint64_t dims[2] = {m.rows(), m.cols()};
    hash = fnv1a(hash, dims, sizeof dims);
    hash = fnv1a(hash, m.data(), m.size() * sizeof(double));
    return hash;
}

std::uint64_t text_encoder_checksum(const TextEncoderParams& text) {
    return tensor_checksum(text.embed) ^ (tensor_checksum(text.proj) * 0x9e3779b97f4a7c15ULL);
}

std::uint64_t checkpoint_checksum(const Checkpoint& ckpt) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto mix_matrix = [&hash](const Matrix& m) {
        const std::uint64_t h = tensor_checksum(m);
        hash = fnv1a(hash, &h, sizeof h);
    };
    auto mix_vector = [&hash](const Vector& v) {
        const std::uint64_t n = v.size();
        hash = fnv1a(hash, &n, sizeof n);
        hash = fnv1a(hash, v.data(), v.size() * sizeof(double));
    };
    mix_matrix(ckpt.image.w1);
    mix_vector(ckpt.image.b1);
    mix_matrix(ckpt.image.w2);
    mix_vector(ckpt.image.b2);
    mix_matrix(ckpt.text.embed);
    mix_matrix(ckpt.text.proj);
    hash = fnv1a(hash, &ckpt.logit_scale, sizeof(double));
    if (ckpt.head) {
        mix_matrix(ckpt.head->weight);
        if (ckpt.head->bias) mix_vector(*ckpt.head->bias);
    }
    return hash;
}

}  // namespace carft
