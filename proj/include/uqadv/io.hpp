#pragma once

// Little-endian binary streams and CSV / key=value text output.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "uqadv/common.hpp"

namespace uqadv::io {

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}
    void bytes(std::string_view raw);
    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void f64s(const Eigen::Ref<const Eigen::VectorXd>& v);

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    BinaryReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
    /// Throws FormatError unless the next bytes equal `magic`.
    void expect_magic(std::string_view magic);
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    Eigen::VectorXd f64s(Index n);
    /// Throws FormatError if unread bytes remain.
    void expect_end();

private:
    void read(char* dst, std::size_t n);
    std::istream& in_;
    std::string source_;
};

/// Shortest round-trip decimal form ("%.17g").
std::string format_double(double v);

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    CsvWriter& cell(double v);
    CsvWriter& cell(long long v);
    CsvWriter& cell(std::string_view v);
    CsvWriter& empty();
    CsvWriter& end_row();
    std::string str() const;
    void save(const std::filesystem::path& path) const;

private:
    std::size_t columns_;
    std::size_t in_row_ = 0;
    std::string text_;
};

/// Plain-text summary: "# comment" lines followed by key=value lines, in insertion order.
class Summary {
public:
    Summary& comment(std::string_view text);
    Summary& set(std::string_view key, std::string_view value);
    Summary& set(std::string_view key, double value);
    Summary& set(std::string_view key, long long value);
    std::string str() const { return text_; }
    void save(const std::filesystem::path& path) const;

private:
    std::string text_;
};

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace uqadv::io
