#include "npz.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "common.hpp"

namespace cfasl {

namespace {

[[noreturn]] void corrupt(const std::string& what) {
  throw_io("corrupt archive: " + what);
}

uint16_t rd16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t rd32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void wr16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void wr32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::vector<uint8_t> inflate_raw(const uint8_t* src, size_t src_len, size_t dst_len) {
  std::vector<uint8_t> out(dst_len);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) corrupt("inflate init failed");
  zs.next_in = const_cast<uint8_t*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(dst_len);
  int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) corrupt("deflate stream did not finish");
  if (zs.total_out != dst_len) corrupt("decompressed size mismatch");
  return out;
}

NpyArray::DType parse_dtype(const std::string& descr) {
  // Leading byte order marker: '<' little endian, '|' not applicable.
  std::string d = descr;
  if (!d.empty() && (d[0] == '<' || d[0] == '|' || d[0] == '=')) d = d.substr(1);
  if (d == "u1" || d == "b1") return NpyArray::DType::u8;
  if (d == "i1") return NpyArray::DType::i8_;
  if (d == "i4") return NpyArray::DType::i32;
  if (d == "i8") return NpyArray::DType::i64;
  if (d == "f4") return NpyArray::DType::f32;
  if (d == "f8") return NpyArray::DType::f64;
  corrupt("unsupported npy dtype '" + descr + "'");
}

std::string dtype_descr(NpyArray::DType t) {
  switch (t) {
    case NpyArray::DType::u8: return "|u1";
    case NpyArray::DType::i8_: return "|i1";
    case NpyArray::DType::i32: return "<i4";
    case NpyArray::DType::i64: return "<i8";
    case NpyArray::DType::f32: return "<f4";
    case NpyArray::DType::f64: return "<f8";
  }
  throw_invalid("bad dtype enum");
}

NpyArray parse_npy(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0)
    corrupt("missing npy magic");
  uint8_t major = bytes[6];
  size_t header_len;
  size_t header_off;
  if (major == 1) {
    header_len = rd16(bytes.data() + 8);
    header_off = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) corrupt("truncated npy header");
    header_len = rd32(bytes.data() + 8);
    header_off = 12;
  } else {
    corrupt("unsupported npy version");
  }
  if (bytes.size() < header_off + header_len) corrupt("truncated npy header");
  std::string header(reinterpret_cast<const char*>(bytes.data() + header_off), header_len);

  auto find_value = [&](const std::string& key) -> std::string {
    size_t k = header.find("'" + key + "'");
    if (k == std::string::npos) corrupt("npy header missing key " + key);
    size_t colon = header.find(':', k);
    if (colon == std::string::npos) corrupt("malformed npy header");
    size_t start = header.find_first_not_of(" ", colon + 1);
    return header.substr(start);
  };

  NpyArray arr;
  {
    std::string v = find_value("descr");
    if (v.empty() || v[0] != '\'') corrupt("malformed descr");
    size_t end = v.find('\'', 1);
    arr.dtype = parse_dtype(v.substr(1, end - 1));
  }
  {
    std::string v = find_value("fortran_order");
    if (v.rfind("False", 0) != 0) corrupt("fortran_order arrays are not supported");
  }
  {
    std::string v = find_value("shape");
    if (v.empty() || v[0] != '(') corrupt("malformed shape");
    size_t end = v.find(')');
    std::string inner = v.substr(1, end - 1);
    size_t pos = 0;
    while (pos < inner.size()) {
      size_t comma = inner.find(',', pos);
      std::string tok = inner.substr(pos, comma == std::string::npos ? std::string::npos
                                                                     : comma - pos);
      // trim
      size_t a = tok.find_first_not_of(" \t");
      size_t b2 = tok.find_last_not_of(" \t");
      if (a != std::string::npos) {
        tok = tok.substr(a, b2 - a + 1);
        if (!tok.empty()) arr.shape.push_back(std::stoll(tok));
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  size_t data_off = header_off + header_len;
  arr.raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_off), bytes.end());
  if (static_cast<int64_t>(arr.raw.size()) < arr.numel() * static_cast<int64_t>(arr.element_size()))
    corrupt("npy payload shorter than its shape requires");
  arr.raw.resize(static_cast<size_t>(arr.numel()) * arr.element_size());
  return arr;
}

std::string npy_bytes(const NpyArray& arr) {
  std::string header = "{'descr': '" + dtype_descr(arr.dtype) +
                       "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < arr.shape.size(); ++i) {
    header += std::to_string(arr.shape[i]);
    if (arr.shape.size() == 1 || i + 1 < arr.shape.size()) header += ",";
    if (i + 1 < arr.shape.size()) header += " ";
  }
  header += "), }";
  size_t total = 10 + header.size() + 1;  // +1 for trailing newline
  size_t pad = (64 - total % 64) % 64;
  header += std::string(pad, ' ');
  header += '\n';

  std::string out;
  out += "\x93NUMPY";
  out.push_back(1);
  out.push_back(0);
  wr16(out, static_cast<uint16_t>(header.size()));
  out += header;
  out.append(reinterpret_cast<const char*>(arr.raw.data()), arr.raw.size());
  return out;
}

}  // namespace

int64_t NpyArray::numel() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

size_t NpyArray::element_size() const {
  switch (dtype) {
    case DType::u8:
    case DType::i8_: return 1;
    case DType::i32:
    case DType::f32: return 4;
    case DType::i64:
    case DType::f64: return 8;
  }
  return 0;
}

std::vector<double> NpyArray::as_doubles() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  const uint8_t* p = raw.data();
  for (size_t i = 0; i < out.size(); ++i) {
    switch (dtype) {
      case DType::u8: out[i] = p[i]; break;
      case DType::i8_: out[i] = static_cast<int8_t>(p[i]); break;
      case DType::i32: {
        int32_t v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = v;
        break;
      }
      case DType::i64: {
        int64_t v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = static_cast<double>(v);
        break;
      }
      case DType::f32: {
        float v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = v;
        break;
      }
      case DType::f64: {
        double v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = v;
        break;
      }
    }
  }
  return out;
}

std::vector<int64_t> NpyArray::as_int64s() const {
  std::vector<double> d = as_doubles();
  std::vector<int64_t> out(d.size());
  for (size_t i = 0; i < d.size(); ++i) out[i] = static_cast<int64_t>(d[i]);
  return out;
}

std::map<std::string, NpyArray> read_npz(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("cannot open archive: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 4) corrupt("file too small");

  std::map<std::string, NpyArray> out;
  size_t off = 0;
  while (off + 4 <= bytes.size()) {
    uint32_t sig = rd32(bytes.data() + off);
    if (sig == 0x02014b50 || sig == 0x06054b50) break;  // central dir / EOCD
    if (sig != 0x04034b50) corrupt("bad local file header signature");
    if (off + 30 > bytes.size()) corrupt("truncated local header");
    const uint8_t* h = bytes.data() + off;
    uint16_t flags = rd16(h + 6);
    uint16_t method = rd16(h + 8);
    uint32_t csize = rd32(h + 18);
    uint32_t usize = rd32(h + 22);
    uint16_t name_len = rd16(h + 26);
    uint16_t extra_len = rd16(h + 28);
    if (flags & 0x08) corrupt("streamed entries are not supported");
    size_t name_off = off + 30;
    if (name_off + name_len + extra_len > bytes.size()) corrupt("truncated entry name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + name_off), name_len);
    size_t data_off = name_off + name_len + extra_len;
    if (data_off + csize > bytes.size()) corrupt("truncated entry data");

    std::vector<uint8_t> payload;
    if (method == 0) {
      if (csize != usize) corrupt("stored entry size mismatch");
      payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(data_off + csize));
    } else if (method == 8) {
      payload = inflate_raw(bytes.data() + data_off, csize, usize);
    } else {
      corrupt("unsupported compression method");
    }

    if (name.size() > 4 && name.substr(name.size() - 4) == ".npy")
      name = name.substr(0, name.size() - 4);
    out[name] = parse_npy(payload);
    off = data_off + csize;
  }
  if (out.empty()) corrupt("no array entries found");
  return out;
}

void write_npz(const std::string& path, const std::map<std::string, NpyArray>& arrays) {
  std::string file;
  std::string central;
  int count = 0;
  for (const auto& [key, arr] : arrays) {
    std::string name = key + ".npy";
    std::string payload = npy_bytes(arr);
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    uint32_t offset = static_cast<uint32_t>(file.size());

    wr32(file, 0x04034b50);
    wr16(file, 20);  // version needed
    wr16(file, 0);   // flags
    wr16(file, 0);   // stored
    wr16(file, 0);   // time
    wr16(file, 0);   // date
    wr32(file, crc);
    wr32(file, static_cast<uint32_t>(payload.size()));
    wr32(file, static_cast<uint32_t>(payload.size()));
    wr16(file, static_cast<uint16_t>(name.size()));
    wr16(file, 0);  // extra
    file += name;
    file += payload;

    wr32(central, 0x02014b50);
    wr16(central, 20);  // version made by
    wr16(central, 20);  // version needed
    wr16(central, 0);
    wr16(central, 0);
    wr16(central, 0);
    wr16(central, 0);
    wr32(central, crc);
    wr32(central, static_cast<uint32_t>(payload.size()));
    wr32(central, static_cast<uint32_t>(payload.size()));
    wr16(central, static_cast<uint16_t>(name.size()));
    wr16(central, 0);
    wr16(central, 0);
    wr16(central, 0);
    wr16(central, 0);
    wr32(central, 0);
    wr32(central, offset);
    central += name;
    ++count;
  }
  std::string eocd;
  wr32(eocd, 0x06054b50);
  wr16(eocd, 0);
  wr16(eocd, 0);
  wr16(eocd, static_cast<uint16_t>(count));
  wr16(eocd, static_cast<uint16_t>(count));
  wr32(eocd, static_cast<uint32_t>(central.size()));
  wr32(eocd, static_cast<uint32_t>(file.size()));
  wr16(eocd, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw_io("cannot write archive: " + path);
  f << file << central << eocd;
  if (!f) throw_io("write failed: " + path);
}

NpyArray make_npy_u8(std::vector<int64_t> shape, std::vector<uint8_t> data) {
  NpyArray a;
  a.dtype = NpyArray::DType::u8;
  a.shape = std::move(shape);
  a.raw = std::move(data);
  CFASL_CHECK_ARG(static_cast<int64_t>(a.raw.size()) == a.numel(),
                  "make_npy_u8: size mismatch");
  return a;
}

NpyArray make_npy_i64(std::vector<int64_t> shape, const std::vector<int64_t>& data) {
  NpyArray a;
  a.dtype = NpyArray::DType::i64;
  a.shape = std::move(shape);
  a.raw.resize(data.size() * 8);
  std::memcpy(a.raw.data(), data.data(), a.raw.size());
  CFASL_CHECK_ARG(static_cast<int64_t>(data.size()) == a.numel(),
                  "make_npy_i64: size mismatch");
  return a;
}

NpyArray make_npy_f64(std::vector<int64_t> shape, const std::vector<double>& data) {
  NpyArray a;
  a.dtype = NpyArray::DType::f64;
  a.shape = std::move(shape);
  a.raw.resize(data.size() * 8);
  std::memcpy(a.raw.data(), data.data(), a.raw.size());
  CFASL_CHECK_ARG(static_cast<int64_t>(data.size()) == a.numel(),
                  "make_npy_f64: size mismatch");
  return a;
}

}  // namespace cfasl
