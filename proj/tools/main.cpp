#include "lazyconv/cli.hpp"

int main(int argc, char** argv) { return lazyconv::cli::run(argc, argv); }
