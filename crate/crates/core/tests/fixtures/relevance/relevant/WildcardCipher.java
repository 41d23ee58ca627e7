import javax.crypto.*;

class WildcardCipher {
    Cipher c() throws Exception { return Cipher.getInstance("AES/GCM/NoPadding"); }
}
