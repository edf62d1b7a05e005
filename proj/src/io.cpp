#include "uqadv/io.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace uqadv::io {

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
    std::array<char, sizeof(T)> buf{};
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
T get_le(const std::array<unsigned char, sizeof(T)>& buf) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void BinaryWriter::bytes(std::string_view raw) { out_.write(raw.data(), static_cast<std::streamsize>(raw.size())); }
void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
void BinaryWriter::u32(std::uint32_t v) { put_le(out_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(out_, v); }
void BinaryWriter::f64(double v) { put_le(out_, std::bit_cast<std::uint64_t>(v)); }
void BinaryWriter::f64s(const Eigen::Ref<const Eigen::VectorXd>& v) {
    for (Index i = 0; i < v.size(); ++i) f64(v[i]);
}

void BinaryReader::read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(source_ + ": unexpected end of file");
}

void BinaryReader::expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    read(got.data(), got.size());
    if (got != magic) throw FormatError(source_ + ": bad magic, expected \"" + std::string(magic) + "\"");
}

std::uint8_t BinaryReader::u8() {
    char c = 0;
    read(&c, 1);
    return static_cast<std::uint8_t>(c);
}

std::uint32_t BinaryReader::u32() {
    std::array<unsigned char, 4> buf{};
    read(reinterpret_cast<char*>(buf.data()), buf.size());
    return get_le<std::uint32_t>(buf);
}

std::uint64_t BinaryReader::u64() {
    std::array<unsigned char, 8> buf{};
    read(reinterpret_cast<char*>(buf.data()), buf.size());
    return get_le<std::uint64_t>(buf);
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

Eigen::VectorXd BinaryReader::f64s(Index n) {
    Eigen::VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = f64();
    return v;
}

void BinaryReader::expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(source_ + ": trailing bytes after payload");
}

std::string format_double(double v) {
    if (v == 0.0) return "0";  // folds -0
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
    text_ += '\n';
}

CsvWriter& CsvWriter::cell(std::string_view v) {
    if (in_row_ == columns_) throw Error("csv: too many cells in row");
    if (in_row_++) text_ += ',';
    if (v.find_first_of(",\"\n") != std::string_view::npos) {
        text_ += '"';
        for (char c : v) text_ += (c == '"') ? std::string("\"\"") : std::string(1, c);
        text_ += '"';
    } else {
        text_ += v;
    }
    return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }
CsvWriter& CsvWriter::cell(long long v) { return cell(std::to_string(v)); }
CsvWriter& CsvWriter::empty() { return cell(std::string_view{}); }

CsvWriter& CsvWriter::end_row() {
    if (in_row_ != columns_) throw Error("csv: row has " + std::to_string(in_row_) + " cells, header has " +
                                         std::to_string(columns_));
    text_ += '\n';
    in_row_ = 0;
    return *this;
}

std::string CsvWriter::str() const { return text_; }
void CsvWriter::save(const std::filesystem::path& path) const { write_text(path, text_); }

Summary& Summary::comment(std::string_view text) {
    text_ += "# ";
    text_ += text;
    text_ += '\n';
    return *this;
}

Summary& Summary::set(std::string_view key, std::string_view value) {
    text_ += key;
    text_ += '=';
    text_ += value;
    text_ += '\n';
    return *this;
}

Summary& Summary::set(std::string_view key, double value) { return set(key, format_double(value)); }
Summary& Summary::set(std::string_view key, long long value) { return set(key, std::to_string(value)); }
void Summary::save(const std::filesystem::path& path) const { write_text(path, text_); }

void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace uqadv::io
