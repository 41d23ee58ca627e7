public class Example1 {
    public String DEFAULT_CRYPTO = "RC4";
    KeyGenerator keyGen = KeyGenerator.getInstance(DEFAULT_CRYPTO);
    SecretKey key = keyGen.generateKey();
    Cipher cipher = Cipher.getInstance(DEFAULT_CRYPTO);
    cipher.init(Cipher.ENCRYPT_MODE, key);}
