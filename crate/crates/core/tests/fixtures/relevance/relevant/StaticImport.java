import static javax.crypto.Cipher.getInstance;

class StaticImport {
    Object c() throws Exception { return getInstance("AES"); }
}
