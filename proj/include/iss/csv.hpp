#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace iss {

/// Header plus string cells, as read from an RFC-4180 CSV file.
struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of `name` in the header, or -1.
    int column(std::string_view name) const;
};

RawTable parse_csv(std::string_view text);
RawTable read_csv(const std::string& path);

/// Streams rows with RFC-4180 quoting (fields containing a comma, quote, CR
/// or LF are quoted; quotes doubled). Lines end with "\n".
class CsvWriter {
public:
    explicit CsvWriter(std::ostream& out) : out_(out) {}
    void row(const std::vector<std::string>& fields);

private:
    std::ostream& out_;
};

std::string csv_escape(std::string_view field);

/// Shortest decimal that round-trips the double exactly ("NA" for NaN).
std::string format_double(double v);

/// Writes `content` to `path` atomically enough for our purposes; throws IoError.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace iss
