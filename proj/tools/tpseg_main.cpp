// placeholder main; the CLI is wired up once the trainer lands
int main() { return 0; }
