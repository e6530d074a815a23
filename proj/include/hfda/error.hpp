#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hfda {

// Bad input data: malformed files, schema violations, invalid specs.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A required column is absent or the table does not match the schema.
class SchemaError : public DataError {
public:
    SchemaError(const std::string& message, std::string column)
        : DataError(message), column_(std::move(column)) {}

    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

// A cell could not be parsed. Rows are 1-based data rows (header excluded).
class ParseError : public DataError {
public:
    ParseError(std::size_t row, std::string column, const std::string& cell)
        : DataError("row " + std::to_string(row) + ", column '" + column +
                    "': cannot parse '" + cell + "'"),
          row_(row), column_(std::move(column)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

class CategoryError : public DataError {
public:
    CategoryError(std::string value, std::string column)
        : DataError("unknown category '" + value + "' in column '" + column + "'"),
          value_(std::move(value)), column_(std::move(column)) {}

    const std::string& value() const noexcept { return value_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::string value_;
    std::string column_;
};

// A target-domain outcome reached a code path that must never see one.
class LeakageError : public DataError {
public:
    using DataError::DataError;
};

// NaN/inf during optimization, singular statistics and similar.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hfda
