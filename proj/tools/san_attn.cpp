int main(int, char**) { return 2; }
