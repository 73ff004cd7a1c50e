#include "certsim/lstn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "certsim/errors.hpp"

namespace certsim {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'T', 'N'};
constexpr uint8_t kVersion = 1;

void put_u64_le(std::ostream& os, uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

uint64_t get_u64_le(std::istream& is, const char* what) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) {
        throw IoError(std::string("truncated LSTN stream while reading ") + what);
    }
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void put_u32_le(std::ostream& os, uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 4);
}

uint32_t get_u32_le(std::istream& is, const char* what) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4)) {
        throw IoError(std::string("truncated LSTN stream while reading ") + what);
    }
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
    return v;
}

} // namespace

void write_lstn(std::ostream& os, const Tensor& t) {
    if (t.ndim() > 255) throw FormatError("LSTN supports at most 255 dimensions");
    os.write(kMagic, 4);
    const char version = static_cast<char>(kVersion);
    const char dtype = static_cast<char>(t.dtype());
    const char ndim = static_cast<char>(t.ndim());
    os.write(&version, 1);
    os.write(&dtype, 1);
    os.write(&ndim, 1);
    const char pad[4] = {0, 0, 0, 0};
    os.write(pad, 4);
    for (size_t d : t.shape()) put_u64_le(os, static_cast<uint64_t>(d));
    if (t.dtype() == Dtype::f32) {
        for (double v : t.data()) {
            put_u32_le(os, std::bit_cast<uint32_t>(static_cast<float>(v)));
        }
    } else {
        for (double v : t.data()) {
            put_u64_le(os, std::bit_cast<uint64_t>(v));
        }
    }
    if (!os) throw IoError("failed writing LSTN stream");
}

Tensor read_lstn(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("truncated LSTN stream while reading magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("bad LSTN magic at offset 0");
    }
    unsigned char head[3];
    if (!is.read(reinterpret_cast<char*>(head), 3)) {
        throw IoError("truncated LSTN stream while reading header");
    }
    if (head[0] != kVersion) {
        throw FormatError("unsupported LSTN version " + std::to_string(head[0]));
    }
    if (head[1] != 1 && head[1] != 2) {
        throw FormatError("unknown LSTN dtype code " + std::to_string(head[1]));
    }
    const Dtype dtype = static_cast<Dtype>(head[1]);
    const size_t ndim = head[2];
    char pad[4];
    if (!is.read(pad, 4)) throw IoError("truncated LSTN stream while reading padding");
    std::vector<size_t> shape(ndim);
    for (size_t i = 0; i < ndim; ++i) {
        shape[i] = static_cast<size_t>(get_u64_le(is, "dims"));
        if (shape[i] == 0) throw FormatError("LSTN dimension " + std::to_string(i) + " is zero");
    }
    const size_t n = shape_numel(shape);
    std::vector<double> data(n);
    if (dtype == Dtype::f32) {
        for (size_t i = 0; i < n; ++i) {
            data[i] = static_cast<double>(std::bit_cast<float>(get_u32_le(is, "payload")));
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            data[i] = std::bit_cast<double>(get_u64_le(is, "payload"));
        }
    }
    return Tensor::from_data(std::move(shape), std::move(data), dtype);
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_lstn(os, t);
    os.flush();
    if (!os) throw IoError("failed writing " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for reading");
    return read_lstn(is);
}

} // namespace certsim
